//! Back-to-front synthesis of a novel view from its fused volume.
//!
//! Levels are swept from the farthest to the nearest; every pixel whose
//! probability at a level exceeds the threshold is overwritten with the
//! weighted average of the input colours seen through that level's plane.
//! The final colour of a pixel therefore comes from the nearest level that
//! passes the threshold and is visible in at least one input.

use std::path::Path;

use nalgebra::Vector2;
use rayon::prelude::*;
use thiserror::Error;

use crate::dpv::DepthProbabilityVolume;
use crate::geometry::{Camera, Reprojector};
use crate::image::{save_gray8, Image, ImageError};

pub const DEFAULT_THRESHOLD: f32 = 0.05;
pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("at least one input view is required")]
    NoInputs,
    #[error("input image is {img_w}x{img_h} but its camera expects {cam_w}x{cam_h}")]
    DimensionMismatch {
        img_w: usize,
        img_h: usize,
        cam_w: usize,
        cam_h: usize,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    /// A level is drawn where its probability is strictly above this.
    pub threshold: f32,
    /// Distance falloff of the view weights; `None` uses the mean distance
    /// between input camera centres.
    pub sigma_c: Option<f64>,
    /// Exponent on the cosine between principal axes.
    pub gamma: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            sigma_c: None,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// `exp(-|c_i - c_nv| / sigma_c) * max(0, cos(z_i, z_nv))^gamma`.
pub fn view_weight(input: &Camera, novel: &Camera, sigma_c: f64, gamma: f64) -> f64 {
    log_view_weight(input, novel, sigma_c, gamma).map_or(0.0, f64::exp)
}

fn log_view_weight(input: &Camera, novel: &Camera, sigma_c: f64, gamma: f64) -> Option<f64> {
    let cos = input.principal_axis().dot(&novel.principal_axis());
    if cos <= 1e-12 {
        return None;
    }
    let distance = (input.center() - novel.center()).norm();
    Some(-distance / sigma_c + gamma * cos.min(1.0).ln())
}

/// Mean pairwise distance between camera centres; 1 for a single camera.
pub fn mean_camera_distance(cameras: &[&Camera]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in cameras.iter().enumerate() {
        for b in &cameras[i + 1..] {
            total += (a.center() - b.center()).norm();
            pairs += 1;
        }
    }
    if pairs == 0 || total <= 0.0 {
        1.0
    } else {
        total / pairs as f64
    }
}

/// Initial novel view with its hole set and per-pixel chosen level.
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    /// Row-major; true where the pixel was written at least once.
    pub coverage: Vec<bool>,
    /// Row-major level index of the final write.
    pub levels: Vec<Option<usize>>,
    level_count: usize,
}

impl RenderedView {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn covered_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.covered_pixels() as f64 / self.coverage.len() as f64
    }

    pub fn coverage_mask_u8(&self) -> Vec<u8> {
        self.coverage
            .iter()
            .map(|&c| if c { 255 } else { 0 })
            .collect()
    }

    /// 0 for holes, otherwise `1 + level * 254 / (n_d - 1)` rounded.
    pub fn level_map_u8(&self) -> Vec<u8> {
        let top = (self.level_count.max(2) - 1) as f64;
        self.levels
            .iter()
            .map(|l| match l {
                None => 0,
                Some(l) => 1 + (*l as f64 * 254.0 / top).round() as u8,
            })
            .collect()
    }

    /// Writes `<stem>.png`, `<stem>_coverage.png` and `<stem>_levels.png`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ImageError> {
        let (w, h) = (self.width(), self.height());
        self.image.save_png(&dir.join(format!("{stem}.png")))?;
        save_gray8(
            &dir.join(format!("{stem}_coverage.png")),
            w,
            h,
            &self.coverage_mask_u8(),
        )?;
        save_gray8(
            &dir.join(format!("{stem}_levels.png")),
            w,
            h,
            &self.level_map_u8(),
        )
    }
}

/// Colours and chosen levels of one image row.
type RowOutput = (Vec<[f32; 3]>, Vec<Option<usize>>);

pub fn render_novel_view(
    volume: &DepthProbabilityVolume,
    inputs: &[(&Image, &Camera)],
    params: &RenderParams,
) -> Result<RenderedView, RenderError> {
    if inputs.is_empty() {
        return Err(RenderError::NoInputs);
    }
    for (img, cam) in inputs {
        if img.width() != cam.width() || img.height() != cam.height() {
            return Err(RenderError::DimensionMismatch {
                img_w: img.width(),
                img_h: img.height(),
                cam_w: cam.width(),
                cam_h: cam.height(),
            });
        }
    }
    let novel = volume.camera();
    let cameras: Vec<&Camera> = inputs.iter().map(|(_, c)| *c).collect();
    let sigma_c = params
        .sigma_c
        .unwrap_or_else(|| mean_camera_distance(&cameras));

    // Relative weights, normalised to the strongest view to avoid underflow
    // far from the inputs.
    let logs: Vec<Option<f64>> = cameras
        .iter()
        .map(|c| log_view_weight(c, novel, sigma_c, params.gamma))
        .collect();
    let best = logs
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let weighted: Vec<(&Image, Reprojector, f64)> = inputs
        .iter()
        .zip(&logs)
        .filter_map(|((img, cam), lw)| {
            lw.map(|lw| (*img, Reprojector::new(cam, novel), (lw - best).exp()))
        })
        .collect();

    let (w, h) = (volume.width(), volume.height());
    let nd = volume.levels();
    let levels: Vec<f64> = volume.range().levels().collect();
    let threshold = params.threshold;

    let rows: Vec<RowOutput> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colors = vec![[0.0f32; 3]; w];
            let mut chosen = vec![None; w];
            for x in 0..w {
                let ray = volume.ray(x, y);
                let pixel = Vector2::new(x as f64, y as f64);
                for l in (0..nd).rev() {
                    if !(ray[l] > threshold) {
                        continue;
                    }
                    if let Some(c) = blend(&weighted, &pixel, levels[l]) {
                        colors[x] = c;
                        chosen[x] = Some(l);
                        break;
                    }
                }
            }
            (colors, chosen)
        })
        .collect();

    let mut image = Image::new(w, h);
    let mut coverage = vec![false; w * h];
    let mut chosen = vec![None; w * h];
    for (y, (colors, row_levels)) in rows.into_iter().enumerate() {
        for x in 0..w {
            if let Some(l) = row_levels[x] {
                image.set(x, y, colors[x]);
                coverage[y * w + x] = true;
                chosen[y * w + x] = Some(l);
            }
        }
    }
    Ok(RenderedView {
        image,
        coverage,
        levels: chosen,
        level_count: nd,
    })
}

/// Weighted average of the inputs' bilinear samples, `None` when no input
/// sees the point.
#[inline]
fn blend(
    inputs: &[(&Image, Reprojector, f64)],
    pixel: &Vector2<f64>,
    disparity: f64,
) -> Option<[f32; 3]> {
    let mut acc = [0.0f64; 3];
    let mut total = 0.0f64;
    for (img, rep, weight) in inputs {
        let Some((p, _)) = rep.map(pixel, disparity) else {
            continue;
        };
        let Some(c) = img.sample_bilinear(p.x, p.y) else {
            continue;
        };
        for k in 0..3 {
            acc[k] += weight * c[k] as f64;
        }
        total += weight;
    }
    if total > 0.0 {
        Some([
            (acc[0] / total) as f32,
            (acc[1] / total) as f32,
            (acc[2] / total) as f32,
        ])
    } else {
        None
    }
}
