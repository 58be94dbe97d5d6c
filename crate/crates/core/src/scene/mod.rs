//! Scene manifests, depth maps and the synthetic scene generator.
//!
//! A manifest is a JSON file listing the views of a scene:
//!
//! ```json
//! {
//!   "views": [
//!     {
//!       "image": "view0.png",
//!       "depth": "view0.dpth",
//!       "camera": {
//!         "rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
//!         "translation": [0, 0, 0],
//!         "fx": 300, "fy": 300, "cx": 159.5, "cy": 119.5,
//!         "width": 320, "height": 240
//!       }
//!     }
//!   ],
//!   "disparity_range": { "d_min": 0.05, "d_max": 0.5 }
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `depth` and
//! `disparity_range` are optional. Rotations are world-to-camera and must
//! be orthonormal within 1e-6; they are re-orthonormalised on load.

mod depth;
pub mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use depth::{
    read_depth, read_depth_file, write_depth, write_depth_file, DepthMap, DEPTH_MAGIC,
};
pub use synthetic::{generate_synthetic_scene, SceneSpec, SyntheticScene};

use crate::geometry::{check_rotation, orthonormalize, Camera, GeometryError, Intrinsics};
use crate::image::{Image, ImageError};

/// Orthonormality tolerance for manifest rotations, which are typically
/// printed with limited precision.
pub const MANIFEST_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("missing file {path}: {source}")]
    Missing {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("view {view}: improper rotation (determinant {det})")]
    ImproperRotation { view: usize, det: f64 },
    #[error("view {view}: rotation is not orthonormal (error {error:e})")]
    NonOrthonormal { view: usize, error: f64 },
    #[error("view {view}: image size mismatch, file is {found_w}x{found_h}, camera says {cam_w}x{cam_h}")]
    ImageSizeMismatch {
        view: usize,
        found_w: usize,
        found_h: usize,
        cam_w: usize,
        cam_h: usize,
    },
    #[error("view {view}: depth size mismatch, file is {found_w}x{found_h}, camera says {cam_w}x{cam_h}")]
    DepthSizeMismatch {
        view: usize,
        found_w: usize,
        found_h: usize,
        cam_w: usize,
        cam_h: usize,
    },
    #[error("view {view}: {source}")]
    Camera { view: usize, source: GeometryError },
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraEntry {
    pub fn from_camera(camera: &Camera) -> Self {
        let r = camera.rotation();
        let t = camera.translation();
        let k = camera.intrinsics();
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [t.x, t.y, t.z],
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: camera.width(),
            height: camera.height(),
        }
    }

    /// Validates and builds the camera; `view` only labels errors.
    pub fn to_camera(&self, view: usize) -> Result<Camera, SceneError> {
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        match check_rotation(&r, MANIFEST_ROTATION_TOLERANCE) {
            Ok(()) => {}
            Err(GeometryError::ImproperRotation(det)) => {
                return Err(SceneError::ImproperRotation { view, det })
            }
            Err(GeometryError::NonOrthonormalRotation(error)) => {
                // An improper matrix may also be far from orthonormal; report
                // the sign problem first since it is the more specific one.
                let det = r.determinant();
                if det < 0.0 {
                    return Err(SceneError::ImproperRotation { view, det });
                }
                return Err(SceneError::NonOrthonormal { view, error });
            }
            Err(source) => return Err(SceneError::Camera { view, source }),
        }
        Camera::new(
            Intrinsics::new(self.fx, self.fy, self.cx, self.cy),
            orthonormalize(&r),
            Vector3::from(self.translation),
            self.width,
            self.height,
        )
        .map_err(|source| SceneError::Camera { view, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    pub camera: CameraEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEntry {
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity_range: Option<RangeEntry>,
}

impl SceneManifest {
    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneView {
    pub image: Image,
    pub camera: Camera,
    pub depth: Option<DepthMap>,
}

/// A manifest with its images, cameras and depth maps loaded.
#[derive(Debug, Clone)]
pub struct Scene {
    pub manifest: SceneManifest,
    pub root: PathBuf,
    pub views: Vec<SceneView>,
}

impl Scene {
    pub fn view_inputs(&self) -> Vec<(&Image, &Camera)> {
        self.views.iter().map(|v| (&v.image, &v.camera)).collect()
    }

    pub fn cameras(&self) -> Vec<&Camera> {
        self.views.iter().map(|v| &v.camera).collect()
    }
}

pub fn load_scene(manifest_path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| SceneError::Missing {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    let manifest: SceneManifest = serde_json::from_str(&text)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, entry) in manifest.views.iter().enumerate() {
        let camera = entry.camera.to_camera(i)?;
        let image_path = root.join(&entry.image);
        if !image_path.is_file() {
            return Err(SceneError::Missing {
                path: image_path.display().to_string(),
                source: std::io::ErrorKind::NotFound.into(),
            });
        }
        let image = Image::load_png(&image_path)?;
        if image.width() != camera.width() || image.height() != camera.height() {
            return Err(SceneError::ImageSizeMismatch {
                view: i,
                found_w: image.width(),
                found_h: image.height(),
                cam_w: camera.width(),
                cam_h: camera.height(),
            });
        }
        let depth = match &entry.depth {
            None => None,
            Some(p) => {
                let d = read_depth_file(&root.join(p))?;
                if d.width() != camera.width() || d.height() != camera.height() {
                    return Err(SceneError::DepthSizeMismatch {
                        view: i,
                        found_w: d.width(),
                        found_h: d.height(),
                        cam_w: camera.width(),
                        cam_h: camera.height(),
                    });
                }
                Some(d)
            }
        };
        views.push(SceneView {
            image,
            camera,
            depth,
        });
    }
    Ok(Scene {
        manifest,
        root,
        views,
    })
}
