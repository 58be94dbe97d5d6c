//! Depth probability volumes: per-pixel distributions over disparity levels.
//!
//! A volume is estimated in three steps: a plane-sweep photoconsistency cost
//! field ([`build_cost_volume`]), a per-ray softmax
//! ([`costs_to_probabilities`]), and an edge-aware cross-bilateral
//! refinement guided by the view's colour image ([`crf_filter`]).

mod cost;
mod crf;
pub(crate) mod io;

pub use cost::{build_cost_volume, CostVolume, DEFAULT_WINDOW, UNINFORMATIVE_COST};
pub use crf::{crf_filter, CrfParams};
pub use io::{read_volume, read_volume_file, write_volume, write_volume_file, VOLUME_MAGIC};

use thiserror::Error;

use crate::geometry::{Camera, DisparityRange, GeometryError};

/// Per-ray sum tolerance for a valid volume.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-5;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Error)]
pub enum DpvError {
    #[error("no depth support: {found} positive depth samples, need at least {needed}")]
    NoDepthSupport { found: usize, needed: usize },
    #[error("degenerate range: depth percentiles coincide")]
    DegenerateRange,
    #[error("invalid costs: non-finite value at ({x}, {y}, {level})")]
    InvalidCosts { x: usize, y: usize, level: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
    #[error("guide mismatch: guide is {guide_w}x{guide_h}, volume is {vol_w}x{vol_h}")]
    GuideMismatch {
        guide_w: usize,
        guide_h: usize,
        vol_w: usize,
        vol_h: usize,
    },
    #[error("no overlap between the reference view and any other view")]
    NoOverlap,
    #[error("at least one other view is required")]
    NoOtherViews,
    #[error("matching window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ray ({x}, {y}) is not a distribution: sum {sum}")]
    NotNormalized { x: usize, y: usize, sum: f64 },
    #[error("negative probability {value} at ({x}, {y}, {level})")]
    NegativeValue {
        x: usize,
        y: usize,
        level: usize,
        value: f32,
    },
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `h x w x n_d` field of per-ray disparity distributions for one camera,
/// stored in `(y, x, level)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthProbabilityVolume {
    camera: Camera,
    range: DisparityRange,
    values: Vec<f32>,
}

impl DepthProbabilityVolume {
    /// Builds a volume and checks the distribution invariants.
    pub fn new(camera: Camera, range: DisparityRange, values: Vec<f32>) -> Result<Self, DpvError> {
        let vol = Self::from_raw(camera, range, values)?;
        vol.validate()?;
        Ok(vol)
    }

    pub(crate) fn from_raw(
        camera: Camera,
        range: DisparityRange,
        values: Vec<f32>,
    ) -> Result<Self, DpvError> {
        let expected = camera.width() * camera.height() * range.len();
        if values.len() != expected {
            return Err(DpvError::DimensionMismatch(format!(
                "volume has {} values, expected {expected}",
                values.len()
            )));
        }
        Ok(Self {
            camera,
            range,
            values,
        })
    }

    /// Every ray uniform over its levels.
    pub fn uniform(camera: Camera, range: DisparityRange) -> Self {
        let n = camera.width() * camera.height() * range.len();
        let p = 1.0 / range.len() as f32;
        Self {
            camera,
            range,
            values: vec![p; n],
        }
    }

    /// Every ray one-hot at the level returned by `level_of(x, y)`; `None`
    /// gives a uniform ray.
    pub fn one_hot(
        camera: Camera,
        range: DisparityRange,
        mut level_of: impl FnMut(usize, usize) -> Option<usize>,
    ) -> Self {
        let mut vol = Self::uniform(camera, range);
        let nd = range.len();
        for y in 0..vol.height() {
            for x in 0..vol.width() {
                if let Some(l) = level_of(x, y) {
                    let ray = vol.ray_mut(x, y);
                    ray.iter_mut().for_each(|v| *v = 0.0);
                    ray[l.min(nd - 1)] = 1.0;
                }
            }
        }
        vol
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn range(&self) -> &DisparityRange {
        &self.range
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    pub fn levels(&self) -> usize {
        self.range.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn ray(&self, x: usize, y: usize) -> &[f32] {
        let nd = self.range.len();
        let start = (y * self.width() + x) * nd;
        &self.values[start..start + nd]
    }

    #[inline]
    pub(crate) fn ray_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let nd = self.range.len();
        let start = (y * self.width() + x) * nd;
        &mut self.values[start..start + nd]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, level: usize) -> f32 {
        self.values[(y * self.width() + x) * self.range.len() + level]
    }

    /// Level with the highest probability (lowest index on ties).
    pub fn mode(&self, x: usize, y: usize) -> usize {
        argmax(self.ray(x, y))
    }

    /// Checks non-negativity and per-ray normalisation.
    pub fn validate(&self) -> Result<(), DpvError> {
        let nd = self.range.len();
        for (i, ray) in self.values.chunks_exact(nd).enumerate() {
            let (x, y) = (i % self.width(), i / self.width());
            let mut sum = 0.0f64;
            for (level, &v) in ray.iter().enumerate() {
                if !(v >= 0.0) {
                    return Err(DpvError::NegativeValue {
                        x,
                        y,
                        level,
                        value: v,
                    });
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(DpvError::NotNormalized { x, y, sum });
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax(ray: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in ray.iter().enumerate() {
        if v > ray[best] {
            best = i;
        }
    }
    best
}

/// Minimum number of positive depth samples for a percentile range.
pub const MIN_DEPTH_SAMPLES: usize = 50;

/// Linear-interpolation percentile of an ascending slice, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Disparity range spanning the 2nd to 98th depth percentiles: the far end
/// is `1 / p98`, the near end `1 / p2`.
pub fn disparity_range_from_depth_percentiles(
    depths: &[f64],
    levels: usize,
) -> Result<DisparityRange, DpvError> {
    let mut valid: Vec<f64> = depths
        .iter()
        .copied()
        .filter(|d| d.is_finite() && *d > 0.0)
        .collect();
    if valid.len() < MIN_DEPTH_SAMPLES {
        return Err(DpvError::NoDepthSupport {
            found: valid.len(),
            needed: MIN_DEPTH_SAMPLES,
        });
    }
    valid.sort_by(f64::total_cmp);
    let near = percentile(&valid, 2.0);
    let far = percentile(&valid, 98.0);
    let (d_min, d_max) = (1.0 / far, 1.0 / near);
    if !(d_min < d_max) {
        return Err(DpvError::DegenerateRange);
    }
    Ok(DisparityRange::new(d_min, d_max, levels)?)
}

/// Numerically stable `softmax(-costs / temperature)`.
pub fn softmax_ray(costs: &[f64], temperature: f64) -> Vec<f64> {
    let lowest = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = costs
        .iter()
        .map(|c| (-(c - lowest) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Converts a cost field into a volume with a per-ray softmax.
pub fn costs_to_probabilities(
    costs: &CostVolume,
    temperature: f64,
) -> Result<DepthProbabilityVolume, DpvError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DpvError::InvalidTemperature(temperature));
    }
    let nd = costs.range().len();
    let w = costs.camera().width();
    if let Some(i) = costs.values().iter().position(|c| !c.is_finite()) {
        let pixel = i / nd;
        return Err(DpvError::InvalidCosts {
            x: pixel % w,
            y: pixel / w,
            level: i % nd,
        });
    }
    let mut values = Vec::with_capacity(costs.values().len());
    let mut buf = vec![0.0f64; nd];
    for ray in costs.values().chunks_exact(nd) {
        for (b, &c) in buf.iter_mut().zip(ray) {
            *b = c as f64;
        }
        values.extend(softmax_ray(&buf, temperature).into_iter().map(|p| p as f32));
    }
    DepthProbabilityVolume::from_raw(costs.camera().clone(), *costs.range(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use nalgebra::{Matrix3, Vector3};

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            Intrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0),
            Matrix3::identity(),
            Vector3::zeros(),
            w,
            h,
        )
        .unwrap()
    }

    #[test]
    fn percentile_range_on_integer_depths() {
        let depths: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let range = disparity_range_from_depth_percentiles(&depths, 100).unwrap();
        // sort-and-interpolate: rank 0.98 * 99 = 97.02 -> 98.02, rank 1.98 -> 2.98
        assert!((range.d_min() - 1.0 / 98.02).abs() < 1e-12);
        assert!((range.d_max() - 1.0 / 2.98).abs() < 1e-12);
        assert_eq!(range.len(), DisparityRange::DEFAULT_LEVELS);
    }

    #[test]
    fn percentile_range_rejects_degenerate_input() {
        assert!(matches!(
            disparity_range_from_depth_percentiles(&[5.0; 80], 100),
            Err(DpvError::DegenerateRange)
        ));
        assert!(matches!(
            disparity_range_from_depth_percentiles(&[], 100),
            Err(DpvError::NoDepthSupport { found: 0, .. })
        ));
        assert!(matches!(
            disparity_range_from_depth_percentiles(&[-1.0; 100], 100),
            Err(DpvError::NoDepthSupport { found: 0, .. })
        ));
    }

    #[test]
    fn softmax_of_constants_is_uniform() {
        let p = softmax_ray(&[0.3; 8], 0.07);
        assert!(p.iter().all(|v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax_ray(&[0.0, 10.0], 0.1);
        let tail = (-100.0f64).exp();
        assert!((p[0] - 1.0 / (1.0 + tail)).abs() < 1e-15);
        assert!((p[1] / 3.720075976020836e-44 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_high_temperature_tends_to_uniform() {
        let p = softmax_ray(&[0.0, 0.5, 1.0, 2.0], 1e9);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn costs_to_probabilities_normalizes() {
        let cam = camera(3, 2);
        let range = DisparityRange::new(0.1, 0.4, 4).unwrap();
        let values: Vec<f32> = (0..24).map(|i| (i % 5) as f32 * 0.3).collect();
        let costs = CostVolume::new(cam, range, values).unwrap();
        let vol = costs_to_probabilities(&costs, 0.07).unwrap();
        vol.validate().unwrap();
        assert!(matches!(
            costs_to_probabilities(&costs, 0.0),
            Err(DpvError::InvalidTemperature(_))
        ));
    }

    #[test]
    fn costs_to_probabilities_rejects_nan() {
        let cam = camera(2, 2);
        let range = DisparityRange::new(0.1, 0.4, 2).unwrap();
        let mut values = vec![0.5f32; 8];
        values[5] = f32::NAN;
        let costs = CostVolume::new(cam, range, values).unwrap();
        assert!(matches!(
            costs_to_probabilities(&costs, 0.1),
            Err(DpvError::InvalidCosts {
                x: 0,
                y: 1,
                level: 1
            })
        ));
    }

    #[test]
    fn validate_catches_bad_rays() {
        let cam = camera(2, 1);
        let range = DisparityRange::new(0.1, 0.4, 2).unwrap();
        assert!(DepthProbabilityVolume::new(cam.clone(), range, vec![0.5, 0.5, 1.0, 0.0]).is_ok());
        assert!(matches!(
            DepthProbabilityVolume::new(cam.clone(), range, vec![0.5, 0.5, 0.9, 0.0]),
            Err(DpvError::NotNormalized { x: 1, y: 0, .. })
        ));
        assert!(matches!(
            DepthProbabilityVolume::new(cam, range, vec![1.5, -0.5, 1.0, 0.0]),
            Err(DpvError::NegativeValue { .. })
        ));
    }

    mod props {
        use super::super::softmax_ray;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_shift_invariant(
                costs in proptest::collection::vec(0.0f64..2.0, 2..40),
                shift in -50.0f64..50.0,
                temperature in 0.01f64..5.0,
            ) {
                let base = softmax_ray(&costs, temperature);
                let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
                let moved = softmax_ray(&shifted, temperature);
                for (a, b) in base.iter().zip(&moved) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
                prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
