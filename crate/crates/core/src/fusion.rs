//! Fusion of per-view volumes into the volume of a novel camera.
//!
//! Every novel-view voxel is backprojected at its level's disparity and
//! looked up in each input volume; contributions are summed per voxel and
//! each novel ray is renormalised at the end. Rays that no input observes
//! fall back to a uniform distribution and are reported as unobserved.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::dpv::DepthProbabilityVolume;
use crate::geometry::{Camera, DisparityRange, GeometryError, Reprojector};

/// How an input volume is sampled at a reprojected voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Nearest pixel (round half up) and nearest level (ties to the
    /// farther level).
    #[default]
    Nearest,
    /// Trilinear interpolation over pixel and level coordinates.
    Trilinear,
}

/// Running sums and contribution counts for a novel camera.
#[derive(Debug, Clone)]
pub struct Accumulator {
    camera: Camera,
    range: DisparityRange,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl Accumulator {
    pub fn new(camera: Camera, range: DisparityRange) -> Self {
        let n = camera.width() * camera.height() * range.len();
        Self {
            camera,
            range,
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn range(&self) -> &DisparityRange {
        &self.range
    }

    /// Sums in `(y, x, level)` order.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

/// Nearest-neighbour resampling of `input` into the accumulator.
pub fn resample_accumulate(input: &DepthProbabilityVolume, accumulator: &mut Accumulator) {
    resample_accumulate_with(input, accumulator, Sampling::Nearest)
}

pub fn resample_accumulate_with(
    input: &DepthProbabilityVolume,
    accumulator: &mut Accumulator,
    sampling: Sampling,
) {
    let rep = Reprojector::new(input.camera(), &accumulator.camera);
    let w = accumulator.camera.width();
    let nd = accumulator.range.len();
    let levels: Vec<f64> = accumulator.range.levels().collect();
    let in_range = *input.range();
    let (in_w, in_h) = (input.width(), input.height());

    accumulator
        .sums
        .par_chunks_mut(w * nd)
        .zip(accumulator.counts.par_chunks_mut(w * nd))
        .enumerate()
        .for_each(|(y, (sums, counts))| {
            for x in 0..w {
                let pixel = Vector2::new(x as f64, y as f64);
                for (l, &disparity) in levels.iter().enumerate() {
                    let Some((p, depth)) = rep.map(&pixel, disparity) else {
                        continue;
                    };
                    let sample = match sampling {
                        Sampling::Nearest => sample_nearest(input, &in_range, in_w, in_h, p, depth),
                        Sampling::Trilinear => {
                            sample_trilinear(input, &in_range, in_w, in_h, p, depth)
                        }
                    };
                    if let Some(v) = sample {
                        sums[x * nd + l] += v;
                        counts[x * nd + l] += 1;
                    }
                }
            }
        });
}

#[inline]
fn sample_nearest(
    input: &DepthProbabilityVolume,
    range: &DisparityRange,
    w: usize,
    h: usize,
    p: Vector2<f64>,
    depth: f64,
) -> Option<f64> {
    let ix = (p.x + 0.5).floor();
    let iy = (p.y + 0.5).floor();
    if !(ix >= 0.0 && iy >= 0.0 && ix < w as f64 && iy < h as f64) {
        return None;
    }
    let level = range.nearest_level(1.0 / depth)?;
    Some(input.get(ix as usize, iy as usize, level) as f64)
}

#[inline]
fn sample_trilinear(
    input: &DepthProbabilityVolume,
    range: &DisparityRange,
    w: usize,
    h: usize,
    p: Vector2<f64>,
    depth: f64,
) -> Option<f64> {
    const SLACK: f64 = 1e-9;
    let f = range.fractional_index(1.0 / depth);
    let top = (range.len() - 1) as f64;
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(p.x >= -SLACK && p.y >= -SLACK && p.x <= xmax + SLACK && p.y <= ymax + SLACK)
        || !(f >= -SLACK && f <= top + SLACK)
    {
        return None;
    }
    let p = Vector2::new(p.x.clamp(0.0, xmax), p.y.clamp(0.0, ymax));
    let f = f.clamp(0.0, top);
    let (x0, y0, l0) = (p.x.floor(), p.y.floor(), f.floor());
    let (tx, ty, tl) = (p.x - x0, p.y - y0, f - l0);
    let (x0, y0, l0) = (x0 as usize, y0 as usize, l0 as usize);
    let (x1, y1, l1) = (
        (x0 + 1).min(w - 1),
        (y0 + 1).min(h - 1),
        (l0 + 1).min(range.len() - 1),
    );
    let mut acc = 0.0;
    for (xi, wx) in [(x0, 1.0 - tx), (x1, tx)] {
        for (yi, wy) in [(y0, 1.0 - ty), (y1, ty)] {
            for (li, wl) in [(l0, 1.0 - tl), (l1, tl)] {
                acc += wx * wy * wl * input.get(xi, yi, li) as f64;
            }
        }
    }
    Some(acc)
}

/// Normalised novel-view volume plus the rays no input observed.
#[derive(Debug, Clone)]
pub struct FusedVolume {
    pub volume: DepthProbabilityVolume,
    /// Per pixel, row-major: true where the ray had zero accumulated mass.
    pub unobserved: Vec<bool>,
}

impl FusedVolume {
    pub fn unobserved_count(&self) -> usize {
        self.unobserved.iter().filter(|&&u| u).count()
    }
}

pub fn normalize_accumulated(accumulator: &Accumulator) -> FusedVolume {
    let nd = accumulator.range.len();
    let uniform = 1.0 / nd as f32;
    let mut values = vec![0.0f32; accumulator.sums.len()];
    let mut unobserved = vec![false; accumulator.sums.len() / nd];
    for ((ray, out), flag) in accumulator
        .sums
        .chunks_exact(nd)
        .zip(values.chunks_exact_mut(nd))
        .zip(unobserved.iter_mut())
    {
        let total: f64 = ray.iter().sum();
        if total > 0.0 {
            for (o, &s) in out.iter_mut().zip(ray) {
                *o = (s / total) as f32;
            }
        } else {
            out.iter_mut().for_each(|o| *o = uniform);
            *flag = true;
        }
    }
    let volume =
        DepthProbabilityVolume::from_raw(accumulator.camera.clone(), accumulator.range, values)
            .expect("accumulator dimensions match its camera and range");
    FusedVolume { volume, unobserved }
}

/// Union of the input ranges resampled to `levels` levels.
pub fn default_novel_range(
    inputs: &[DepthProbabilityVolume],
    levels: usize,
) -> Result<DisparityRange, GeometryError> {
    let d_min = inputs
        .iter()
        .map(|v| v.range().d_min())
        .fold(f64::INFINITY, f64::min);
    let d_max = inputs
        .iter()
        .map(|v| v.range().d_max())
        .fold(f64::NEG_INFINITY, f64::max);
    DisparityRange::new(d_min, d_max, levels)
}

/// Resamples and accumulates every input, then normalises.
pub fn fuse_volumes(
    inputs: &[DepthProbabilityVolume],
    novel_camera: &Camera,
    novel_range: &DisparityRange,
    sampling: Sampling,
) -> FusedVolume {
    let mut acc = Accumulator::new(novel_camera.clone(), *novel_range);
    for input in inputs {
        resample_accumulate_with(input, &mut acc, sampling);
    }
    normalize_accumulated(&acc)
}
