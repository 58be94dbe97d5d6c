//! Pinhole cameras, disparity sampling and plane-induced homographies.
//!
//! Conventions used throughout the crate:
//! - rotation and translation map world points into the camera frame
//!   (`X_cam = R * X_world + t`), the camera looks along `+z`, `x` points
//!   right and `y` points down;
//! - integer pixel coordinates address pixel centres;
//! - "disparity" is inverse depth along the optical axis, in inverse scene
//!   units.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Per-entry tolerance on `RᵀR = I` for a constructed camera.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid disparity {0}: must be finite and positive")]
    InvalidDisparity(f64),
    #[error("degenerate plane: it passes through a camera centre")]
    DegeneratePlane,
    #[error("rotation is not orthonormal (max deviation {0:.3e})")]
    NonOrthonormalRotation(f64),
    #[error("improper rotation (determinant {0:.6})")]
    ImproperRotation(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate disparity range [{d_min}, {d_max}]")]
    DegenerateRange { d_min: f64, d_max: f64 },
    #[error("a disparity range needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A calibrated pinhole camera without lens distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Intrinsics,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "empty image size {width}x{height}"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "non-finite translation".into(),
            ));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `position` looking at `target`. `down` is the world
    /// direction that should appear pointing down in the image.
    pub fn look_at(
        intrinsics: Intrinsics,
        position: Vector3<f64>,
        target: Vector3<f64>,
        down: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let forward = (target - position).try_normalize(1e-12).ok_or_else(|| {
            GeometryError::InvalidIntrinsics("look_at target coincides with position".into())
        })?;
        let right = down.cross(&forward).try_normalize(1e-12).ok_or_else(|| {
            GeometryError::InvalidIntrinsics("down vector parallel to viewing direction".into())
        })?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        Self::new(intrinsics, rotation, translation, width, height)
    }

    /// Same orientation, intrinsics and image size, moved to `center`.
    pub fn with_center(&self, center: Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.translation = -(self.rotation * center);
        out
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Unit optical axis in world coordinates.
    pub fn principal_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Projects a world point; returns continuous pixel coordinates and the
    /// depth along the optical axis.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
        let pc = self.to_camera_frame(point);
        if !(pc.z > 0.0) {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        let k = &self.intrinsics;
        let pixel = Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
        Ok((pixel, pc.z))
    }

    /// World point seen at `pixel` with depth `1 / disparity`.
    pub fn backproject(
        &self,
        pixel: &Vector2<f64>,
        disparity: f64,
    ) -> Result<Vector3<f64>, GeometryError> {
        if !(disparity > 0.0 && disparity.is_finite()) {
            return Err(GeometryError::InvalidDisparity(disparity));
        }
        let depth = 1.0 / disparity;
        let k = &self.intrinsics;
        let pc = Vector3::new(
            (pixel.x - k.cx) / k.fx * depth,
            (pixel.y - k.cy) / k.fy * depth,
            depth,
        );
        Ok(self.rotation.transpose() * (pc - self.translation))
    }

    /// True when the continuous coordinate can be bilinearly sampled.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// Checks `RᵀR = I` per entry within `tolerance` and `det R = +1`.
pub fn check_rotation(rotation: &Matrix3<f64>, tolerance: f64) -> Result<(), GeometryError> {
    let err = (rotation.transpose() * rotation - Matrix3::identity())
        .abs()
        .max();
    if !(err <= tolerance) {
        return Err(GeometryError::NonOrthonormalRotation(err));
    }
    let det = rotation.determinant();
    if det < 0.0 {
        return Err(GeometryError::ImproperRotation(det));
    }
    Ok(())
}

/// Nearest rotation matrix in the Frobenius sense (polar decomposition).
pub fn orthonormalize(rotation: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = rotation.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => *rotation,
    }
}

/// `n_d` disparity levels uniformly spaced from `d_min` (level 0, farthest)
/// to `d_max` (level `n_d - 1`, nearest).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisparityRange {
    d_min: f64,
    d_max: f64,
    levels: usize,
}

impl DisparityRange {
    pub const DEFAULT_LEVELS: usize = 100;

    pub fn new(d_min: f64, d_max: f64, levels: usize) -> Result<Self, GeometryError> {
        if levels < 2 {
            return Err(GeometryError::TooFewLevels(levels));
        }
        if !(d_min > 0.0 && d_max.is_finite() && d_min < d_max) {
            return Err(GeometryError::DegenerateRange { d_min, d_max });
        }
        Ok(Self {
            d_min,
            d_max,
            levels,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn len(&self) -> usize {
        self.levels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.d_max - self.d_min) / (self.levels - 1) as f64
    }

    pub fn level(&self, index: usize) -> f64 {
        debug_assert!(index < self.levels);
        if index + 1 == self.levels {
            self.d_max
        } else {
            self.d_min + index as f64 * self.step()
        }
    }

    pub fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.levels).map(move |i| self.level(i))
    }

    /// Continuous level coordinate of a disparity.
    pub fn fractional_index(&self, disparity: f64) -> f64 {
        (disparity - self.d_min) / self.step()
    }

    /// Nearest level, ties resolved towards the farther (lower) level.
    /// `None` when the nearest level falls outside `0..n_d`.
    pub fn nearest_level(&self, disparity: f64) -> Option<usize> {
        let idx = (self.fractional_index(disparity) - 0.5).ceil();
        if idx >= 0.0 && idx < self.levels as f64 {
            Some(idx as usize)
        } else {
            None
        }
    }

    /// Smallest range containing both, resampled to `levels` levels.
    pub fn union(&self, other: &DisparityRange, levels: usize) -> Result<Self, GeometryError> {
        Self::new(
            self.d_min.min(other.d_min),
            self.d_max.max(other.d_max),
            levels,
        )
    }
}

/// World plane `normal · X = offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Fronto-parallel plane at depth `1 / disparity` in `camera`.
    pub fn fronto_parallel(camera: &Camera, disparity: f64) -> Result<Self, GeometryError> {
        if !(disparity > 0.0 && disparity.is_finite()) {
            return Err(GeometryError::InvalidDisparity(disparity));
        }
        // z_cam = r3 · X + t_z = 1/d
        let normal = camera.principal_axis();
        let offset = 1.0 / disparity - camera.translation.z;
        Ok(Self { normal, offset })
    }
}

/// Homography mapping pixels of `dst` to pixels of `src` for points on the
/// fronto-parallel plane (in `dst`) at the given disparity. Disparity zero
/// is the plane at infinity.
pub fn plane_homography(
    src: &Camera,
    dst: &Camera,
    disparity: f64,
) -> Result<Matrix3<f64>, GeometryError> {
    if !(disparity >= 0.0 && disparity.is_finite()) {
        return Err(GeometryError::InvalidDisparity(disparity));
    }
    let (r_rel, t_rel) = relative_pose(src, dst);
    // src centre expressed in dst coordinates is -R_relᵀ t_rel; the plane
    // z_dst = 1/d contains it iff 1 - d * z = 0.
    let src_center_z = -(r_rel.transpose() * t_rel).z;
    if (1.0 - disparity * src_center_z).abs() < 1e-12 {
        return Err(GeometryError::DegeneratePlane);
    }
    let n = Vector3::z();
    let m = r_rel + t_rel * n.transpose() * disparity;
    normalize_homography(src.intrinsics.matrix() * m * dst.intrinsics.inverse_matrix())
}

/// Homography mapping pixels of `dst` to pixels of `src` for points on an
/// arbitrary world plane.
pub fn homography_for_plane(
    src: &Camera,
    dst: &Camera,
    plane: &Plane,
) -> Result<Matrix3<f64>, GeometryError> {
    let (r_rel, t_rel) = relative_pose(src, dst);
    // Plane in dst coordinates: n_dᵀ X_d = rho.
    let n_d = dst.rotation * plane.normal;
    let rho = plane.offset + n_d.dot(&dst.translation);
    let scale = plane.normal.norm().max(1.0);
    if rho.abs() < 1e-12 * scale {
        return Err(GeometryError::DegeneratePlane);
    }
    let src_center_d = -(r_rel.transpose() * t_rel);
    if (1.0 - n_d.dot(&src_center_d) / rho).abs() < 1e-12 {
        return Err(GeometryError::DegeneratePlane);
    }
    let m = r_rel + t_rel * n_d.transpose() / rho;
    normalize_homography(src.intrinsics.matrix() * m * dst.intrinsics.inverse_matrix())
}

fn relative_pose(src: &Camera, dst: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
    let r_rel = src.rotation * dst.rotation.transpose();
    let t_rel = src.translation - r_rel * dst.translation;
    (r_rel, t_rel)
}

fn normalize_homography(h: Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegeneratePlane);
    }
    // Scale by |h33| only, so the third coordinate of a mapped pixel keeps
    // the sign of the point's depth in `src`.
    let corner = h[(2, 2)].abs();
    if corner > 1e-300 {
        Ok(h / corner)
    } else {
        Ok(h)
    }
}

/// Applies a homography to a pixel; `None` when the point maps to infinity.
pub fn apply_homography(h: &Matrix3<f64>, pixel: &Vector2<f64>) -> Option<Vector2<f64>> {
    let p = h * Vector3::new(pixel.x, pixel.y, 1.0);
    if p.z.abs() < 1e-300 {
        return None;
    }
    Some(Vector2::new(p.x / p.z, p.y / p.z))
}

/// Precomputed `dst -> src` reprojection of (pixel, disparity) samples.
///
/// This is the fast path used by the volume kernels; it composes the two
/// rigid transforms once instead of going through world coordinates.
#[derive(Debug, Clone)]
pub struct Reprojector {
    k_dst_inv: Matrix3<f64>,
    r_rel: Matrix3<f64>,
    t_rel: Vector3<f64>,
    src: Intrinsics,
}

impl Reprojector {
    pub fn new(src: &Camera, dst: &Camera) -> Self {
        let (r_rel, t_rel) = relative_pose(src, dst);
        Self {
            k_dst_inv: dst.intrinsics.inverse_matrix(),
            r_rel,
            t_rel,
            src: src.intrinsics,
        }
    }

    /// Pixel in `src` and depth in `src` of the point seen by `dst` at
    /// `pixel` with the given disparity. `None` if behind `src`.
    #[inline]
    pub fn map(&self, pixel: &Vector2<f64>, disparity: f64) -> Option<(Vector2<f64>, f64)> {
        let ray = self.k_dst_inv * Vector3::new(pixel.x, pixel.y, 1.0);
        let p = self.r_rel * (ray / disparity) + self.t_rel;
        if !(p.z > 0.0) {
            return None;
        }
        let k = &self.src;
        Some((
            Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
            p.z,
        ))
    }
}
