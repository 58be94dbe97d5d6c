//! Plane-sweep photoconsistency costs.
//!
//! For every disparity level the other views are warped into the reference
//! view through the plane-induced homography, and each reference window is
//! scored with `1 - ZNCC` on luma. Window statistics come from summed-area
//! tables, so the cost per level is `O(h * w)` regardless of window size.

use nalgebra::Vector2;
use rayon::prelude::*;

use super::DpvError;
use crate::geometry::{Camera, DisparityRange, Reprojector};
use crate::image::{sample_plane, Image};

pub const DEFAULT_WINDOW: usize = 7;

/// Cost assigned where no other view can be compared.
pub const UNINFORMATIVE_COST: f32 = 1.0;

/// Cost field with the same layout as a probability volume.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    camera: Camera,
    range: DisparityRange,
    values: Vec<f32>,
}

impl CostVolume {
    pub fn new(camera: Camera, range: DisparityRange, values: Vec<f32>) -> Result<Self, DpvError> {
        let expected = camera.width() * camera.height() * range.len();
        if values.len() != expected {
            return Err(DpvError::DimensionMismatch(format!(
                "cost field has {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(Self {
            camera,
            range,
            values,
        })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn range(&self) -> &DisparityRange {
        &self.range
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn ray(&self, x: usize, y: usize) -> &[f32] {
        let nd = self.range.len();
        let start = (y * self.camera.width() + x) * nd;
        &self.values[start..start + nd]
    }

    /// Level of lowest cost (lowest index on ties).
    pub fn argmin(&self, x: usize, y: usize) -> usize {
        let ray = self.ray(x, y);
        let mut best = 0;
        for (i, &c) in ray.iter().enumerate() {
            if c < ray[best] {
                best = i;
            }
        }
        best
    }
}

/// Mean `1 - ZNCC` over the other views, per reference pixel and level.
///
/// A view only contributes to `(x, y, level)` when every window sample lands
/// inside it; windows are clipped at the reference image border. Windows
/// with zero variance in either image count as correlation 0.
pub fn build_cost_volume(
    reference: (&Image, &Camera),
    others: &[(&Image, &Camera)],
    range: &DisparityRange,
    window: usize,
) -> Result<CostVolume, DpvError> {
    if others.is_empty() {
        return Err(DpvError::NoOtherViews);
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(DpvError::InvalidWindow(window));
    }
    check_dims(reference.0, reference.1)?;
    for (img, cam) in others {
        check_dims(img, cam)?;
    }
    let (ref_img, ref_cam) = reference;
    let (w, h) = (ref_cam.width(), ref_cam.height());
    let nd = range.len();
    let radius = window / 2;
    let ref_luma = ref_img.luminance();
    let other_luma: Vec<Vec<f32>> = others.iter().map(|(img, _)| img.luminance()).collect();
    let reprojectors: Vec<Reprojector> = others
        .iter()
        .map(|(_, cam)| Reprojector::new(cam, ref_cam))
        .collect();

    let per_level: Vec<(Vec<f32>, Vec<u16>)> = (0..nd)
        .into_par_iter()
        .map(|level| {
            let disparity = range.level(level);
            let mut sum = vec![0.0f32; w * h];
            let mut count = vec![0u16; w * h];
            let mut warped = vec![0.0f32; w * h];
            let mut valid = vec![false; w * h];
            for (k, (_, cam)) in others.iter().enumerate() {
                let (rep, luma) = (&reprojectors[k], &other_luma[k]);
                for y in 0..h {
                    for x in 0..w {
                        let i = y * w + x;
                        // Same mapping as the plane homography at this level,
                        // but rejects points behind the other camera.
                        let sample = rep
                            .map(&Vector2::new(x as f64, y as f64), disparity)
                            .and_then(|(p, _)| {
                                sample_plane(luma, cam.width(), cam.height(), p.x, p.y)
                            });
                        valid[i] = sample.is_some();
                        warped[i] = sample.unwrap_or(0.0);
                    }
                }
                accumulate_zncc(
                    &ref_luma, &warped, &valid, w, h, radius, &mut sum, &mut count,
                );
            }
            (sum, count)
        })
        .collect();

    let mut values = vec![UNINFORMATIVE_COST; w * h * nd];
    let mut any = false;
    for (level, (sum, count)) in per_level.iter().enumerate() {
        for i in 0..w * h {
            if count[i] > 0 {
                any = true;
                values[i * nd + level] = sum[i] / count[i] as f32;
            }
        }
    }
    if !any {
        return Err(DpvError::NoOverlap);
    }
    CostVolume::new(ref_cam.clone(), *range, values)
}

fn check_dims(img: &Image, cam: &Camera) -> Result<(), DpvError> {
    if img.width() != cam.width() || img.height() != cam.height() {
        return Err(DpvError::DimensionMismatch(format!(
            "image is {}x{}, camera expects {}x{}",
            img.width(),
            img.height(),
            cam.width(),
            cam.height()
        )));
    }
    Ok(())
}

/// Summed-area table with a zero first row and column.
struct Integral {
    stride: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, mut f: impl FnMut(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0f64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Self { stride, data }
    }

    /// Sum over `[x0, x1) x [y0, y1)`.
    #[inline]
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.stride;
        self.data[y1 * s + x1] - self.data[y0 * s + x1] - self.data[y1 * s + x0]
            + self.data[y0 * s + x0]
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_zncc(
    a: &[f32],
    b: &[f32],
    valid: &[bool],
    w: usize,
    h: usize,
    radius: usize,
    sum: &mut [f32],
    count: &mut [u16],
) {
    let mask = |i: usize| if valid[i] { 1.0 } else { 0.0 };
    let n_valid = Integral::new(w, h, mask);
    if n_valid.rect(0, 0, w, h) == 0.0 {
        return;
    }
    let m = |i: usize, v: f32| if valid[i] { v as f64 } else { 0.0 };
    let sa = Integral::new(w, h, |i| m(i, a[i]));
    let sb = Integral::new(w, h, |i| m(i, b[i]));
    let saa = Integral::new(w, h, |i| m(i, a[i]) * a[i] as f64);
    let sbb = Integral::new(w, h, |i| m(i, b[i]) * b[i] as f64);
    let sab = Integral::new(w, h, |i| m(i, a[i]) * b[i] as f64);

    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            if n_valid.rect(x0, y0, x1, y1) < n - 0.5 {
                continue;
            }
            let ncc = zncc_from_sums(
                n,
                sa.rect(x0, y0, x1, y1),
                sb.rect(x0, y0, x1, y1),
                saa.rect(x0, y0, x1, y1),
                sbb.rect(x0, y0, x1, y1),
                sab.rect(x0, y0, x1, y1),
            );
            let i = y * w + x;
            sum[i] += (1.0 - ncc) as f32;
            count[i] += 1;
        }
    }
}

/// Below this per-sample variance a window is treated as flat.
const FLAT_VARIANCE: f64 = 1e-9;

#[inline]
pub(crate) fn zncc_from_sums(n: f64, sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64) -> f64 {
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= FLAT_VARIANCE * n || vb <= FLAT_VARIANCE * n {
        return 0.0;
    }
    let cov = sab - sa * sb / n;
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| {
            let v = rng.gen::<f32>();
            [v, 1.0 - v, 0.5 * v]
        })
    }

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            Intrinsics::new(40.0, 40.0, w as f64 / 2.0, h as f64 / 2.0),
            Matrix3::identity(),
            Vector3::zeros(),
            w,
            h,
        )
        .unwrap()
    }

    /// Direct per-window ZNCC used to check the summed-area path.
    fn zncc_direct(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        if va <= FLAT_VARIANCE * n || vb <= FLAT_VARIANCE * n {
            0.0
        } else {
            cov / (va * vb).sqrt()
        }
    }

    #[test]
    fn summed_area_zncc_matches_direct_evaluation() {
        let (w, h) = (12, 9);
        let a: Vec<f32> = noise_image(w, h, 1).luminance();
        let b: Vec<f32> = noise_image(w, h, 2).luminance();
        let valid = vec![true; w * h];
        let mut sum = vec![0.0f32; w * h];
        let mut count = vec![0u16; w * h];
        accumulate_zncc(&a, &b, &valid, w, h, 2, &mut sum, &mut count);
        for y in 0..h {
            for x in 0..w {
                let mut wa = Vec::new();
                let mut wb = Vec::new();
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        wa.push(a[yy * w + xx] as f64);
                        wb.push(b[yy * w + xx] as f64);
                    }
                }
                let expected = 1.0 - zncc_direct(&wa, &wb);
                assert_eq!(count[y * w + x], 1);
                assert!((sum[y * w + x] as f64 - expected).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn self_match_costs_zero_everywhere() {
        let img = noise_image(24, 20, 7);
        let cam = camera(24, 20);
        let range = DisparityRange::new(0.1, 1.0, 6).unwrap();
        let costs = build_cost_volume((&img, &cam), &[(&img, &cam)], &range, 5).unwrap();
        let worst = costs.values().iter().fold(0.0f32, |m, c| m.max(c.abs()));
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn textureless_images_give_flat_unit_costs() {
        let img = Image::filled(16, 16, [0.4, 0.4, 0.4]);
        let cam = camera(16, 16);
        let other_cam = cam.with_center(Vector3::new(0.1, 0.0, 0.0));
        let range = DisparityRange::new(0.1, 0.5, 5).unwrap();
        let costs = build_cost_volume((&img, &cam), &[(&img, &other_cam)], &range, 3).unwrap();
        assert!(costs.values().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let img = noise_image(8, 8, 3);
        let cam = camera(8, 8);
        let range = DisparityRange::new(0.1, 0.5, 3).unwrap();
        assert!(matches!(
            build_cost_volume((&img, &cam), &[], &range, 3),
            Err(DpvError::NoOtherViews)
        ));
        assert!(matches!(
            build_cost_volume((&img, &cam), &[(&img, &cam)], &range, 4),
            Err(DpvError::InvalidWindow(4))
        ));
        let small = noise_image(6, 8, 3);
        assert!(matches!(
            build_cost_volume((&small, &cam), &[(&img, &cam)], &range, 3),
            Err(DpvError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn disjoint_frusta_report_no_overlap() {
        let img = noise_image(8, 8, 3);
        let cam = camera(8, 8);
        // Looking the opposite way: nothing in front of the reference is
        // in front of the other camera.
        let other = Camera::look_at(
            *cam.intrinsics(),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::y(),
            8,
            8,
        )
        .unwrap();
        let range = DisparityRange::new(0.1, 0.5, 3).unwrap();
        assert!(matches!(
            build_cost_volume((&img, &cam), &[(&img, &other)], &range, 3),
            Err(DpvError::NoOverlap)
        ));
    }
}
