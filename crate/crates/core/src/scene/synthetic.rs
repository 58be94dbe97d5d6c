//! Ray-cast synthetic scenes with exact depth.
//!
//! A scene is a set of textured planes and axis-aligned boxes seen by a
//! rig of look-at cameras. Surfaces are Lambertian under a fixed
//! directional light, so their colour does not depend on the viewer.
//! Textures are a softened checkerboard modulated by value noise; the
//! random parts come from the seed only.
//!
//! Spec files are JSON:
//!
//! ```json
//! {
//!   "width": 320, "height": 240, "focal": 320,
//!   "cameras": [{ "position": [0, 0, 0], "target": [0, 0, 10] }],
//!   "primitives": [
//!     { "type": "plane", "point": [0, 0, 20], "normal": [0, 0, -1] },
//!     { "type": "box", "min": [-1, -1, 8], "max": [1, 1, 10],
//!       "texture": { "base": [0.8, 0.3, 0.2], "checker": 0.4 } }
//!   ]
//! }
//! ```

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    write_depth_file, CameraEntry, DepthMap, RangeEntry, SceneError, SceneManifest, ViewEntry,
};
use crate::geometry::{Camera, Intrinsics};
use crate::image::Image;

fn default_down() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_supersample() -> usize {
    3
}

fn default_light() -> [f64; 3] {
    [-0.3, -0.5, -0.8]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub target: [f64; 3],
    /// World direction that appears pointing down in the image.
    #[serde(default = "default_down")]
    pub down: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    pub base: [f32; 3],
    /// Checker cell size in scene units; 0 disables the checkerboard.
    pub checker: f64,
    /// Relative brightness swing of the checkerboard.
    pub contrast: f32,
    /// Amplitude of the per-channel value noise.
    pub noise: f32,
    /// Feature size of the noise in scene units.
    pub noise_scale: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            base: [0.6, 0.6, 0.6],
            checker: 0.5,
            contrast: 0.35,
            noise: 0.25,
            noise_scale: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PrimitiveSpec {
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        texture: TextureSpec,
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default)]
        texture: TextureSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; defaults to the image width.
    #[serde(default)]
    pub focal: Option<f64>,
    pub cameras: Vec<CameraSpec>,
    pub primitives: Vec<PrimitiveSpec>,
    /// Samples per pixel along each axis.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    /// Direction the light travels.
    #[serde(default = "default_light")]
    pub light: [f64; 3],
    #[serde(default)]
    pub disparity_range: Option<RangeEntry>,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = self.focal.unwrap_or(self.width as f64);
        Intrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
    },
    Box {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

#[derive(Debug, Clone)]
struct Primitive {
    shape: Shape,
    texture: TextureSpec,
    noise_seeds: [u64; 3],
    offset: Vector2<f64>,
}

/// Closest surface along a pixel ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Depth along the camera's optical axis.
    pub depth: f64,
    pub primitive: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    spec: SceneSpec,
    primitives: Vec<Primitive>,
    cameras: Vec<Camera>,
    light: Vector3<f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(
        seed ^ splitmix((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ (iy as u64).rotate_left(32)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[-0.5, 0.5]`, two octaves.
fn value_noise(s: f64, t: f64, seed: u64) -> f64 {
    let mut total = 0.0;
    let mut amp = 0.0;
    for (octave, weight) in [(1.0, 0.7), (2.0, 0.3)] {
        let (x, y) = (s * octave, t * octave);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let seed = seed.wrapping_add(octave as u64);
        let a = lattice(ix, iy, seed);
        let b = lattice(ix + 1, iy, seed);
        let c = lattice(ix, iy + 1, seed);
        let d = lattice(ix + 1, iy + 1, seed);
        let top = a + (b - a) * sx;
        let bottom = c + (d - c) * sx;
        total += weight * (top + (bottom - top) * sy);
        amp += weight;
    }
    total / amp - 0.5
}

fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = helper.cross(normal).normalize();
    let v = normal.cross(&u);
    (u, v)
}

impl Primitive {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match &self.shape {
            Shape::Plane { point, normal, .. } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > 0.0).then_some((t, *normal))
            }
            Shape::Box { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (min[a] - origin[a]) / dir[a];
                    let t2 = (max[a] - origin[a]) / dir[a];
                    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                    if lo > t_near {
                        t_near = lo;
                        axis = a;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_near <= 0.0 {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = -dir[axis].signum();
                Some((t_near, n))
            }
        }
    }

    fn surface_coords(&self, p: &Vector3<f64>, normal: &Vector3<f64>) -> (f64, f64) {
        match &self.shape {
            Shape::Plane { point, u, v, .. } => {
                let d = p - point;
                (d.dot(u), d.dot(v))
            }
            Shape::Box { .. } => {
                let axis = normal.iamax();
                let (a, b) = match axis {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                (p[a], p[b])
            }
        }
    }

    fn albedo(&self, p: &Vector3<f64>, normal: &Vector3<f64>) -> [f64; 3] {
        let (s, t) = self.surface_coords(p, normal);
        let (s, t) = (s + self.offset.x, t + self.offset.y);
        let tex = &self.texture;
        let checker = if tex.checker > 0.0 {
            let c = (std::f64::consts::PI * s / tex.checker).sin()
                * (std::f64::consts::PI * t / tex.checker).sin();
            0.5 + 0.5 * (4.0 * c).tanh()
        } else {
            0.5
        };
        let gain = 1.0 - tex.contrast as f64 + 2.0 * tex.contrast as f64 * checker;
        let scale = tex.noise_scale.max(1e-9);
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let n = value_noise(s / scale, t / scale, self.noise_seeds[k]);
            *o = tex.base[k] as f64 * gain + tex.noise as f64 * 2.0 * n;
        }
        out
    }

    fn contains_strictly(&self, p: &Vector3<f64>) -> bool {
        match &self.shape {
            Shape::Plane { point, normal, .. } => normal.dot(&(p - point)).abs() < 1e-9,
            Shape::Box { min, max } => (0..3).all(|a| p[a] > min[a] - 1e-9 && p[a] < max[a] + 1e-9),
        }
    }
}

impl SyntheticScene {
    pub fn new(spec: SceneSpec, seed: u64) -> Result<Self, SceneError> {
        if spec.primitives.is_empty() {
            return Err(SceneError::Spec(
                "at least one primitive is required".into(),
            ));
        }
        if spec.cameras.len() < 2 {
            return Err(SceneError::Spec("at least two cameras are required".into()));
        }
        if spec.width == 0 || spec.height == 0 || spec.supersample == 0 {
            return Err(SceneError::Spec(
                "image size and supersampling must be positive".into(),
            ));
        }
        let light = Vector3::from(spec.light)
            .try_normalize(1e-12)
            .ok_or_else(|| SceneError::Spec("light direction is zero".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut primitives = Vec::with_capacity(spec.primitives.len());
        for (i, p) in spec.primitives.iter().enumerate() {
            let (shape, texture) = match p {
                PrimitiveSpec::Plane {
                    point,
                    normal,
                    texture,
                } => {
                    let normal = Vector3::from(*normal).try_normalize(1e-12).ok_or_else(|| {
                        SceneError::Spec(format!("primitive {i}: zero plane normal"))
                    })?;
                    let (u, v) = plane_basis(&normal);
                    (
                        Shape::Plane {
                            point: Vector3::from(*point),
                            normal,
                            u,
                            v,
                        },
                        texture,
                    )
                }
                PrimitiveSpec::Box { min, max, texture } => {
                    if (0..3).any(|a| !(min[a] < max[a])) {
                        return Err(SceneError::Spec(format!(
                            "primitive {i}: box min must be below max"
                        )));
                    }
                    (
                        Shape::Box {
                            min: Vector3::from(*min),
                            max: Vector3::from(*max),
                        },
                        texture,
                    )
                }
            };
            primitives.push(Primitive {
                shape,
                texture: texture.clone(),
                noise_seeds: [rng.gen(), rng.gen(), rng.gen()],
                offset: Vector2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)),
            });
        }
        let intrinsics = spec.intrinsics();
        let mut cameras = Vec::with_capacity(spec.cameras.len());
        for (i, c) in spec.cameras.iter().enumerate() {
            let position = Vector3::from(c.position);
            if let Some(k) = primitives
                .iter()
                .position(|p| p.contains_strictly(&position))
            {
                return Err(SceneError::InvalidRig(format!(
                    "camera {i} is inside primitive {k}"
                )));
            }
            let camera = Camera::look_at(
                intrinsics,
                position,
                Vector3::from(c.target),
                Vector3::from(c.down),
                spec.width,
                spec.height,
            )
            .map_err(|source| SceneError::Camera { view: i, source })?;
            cameras.push(camera);
        }
        Ok(Self {
            spec,
            primitives,
            cameras,
            light,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    /// A camera with the rig's intrinsics and image size.
    pub fn look_at(
        &self,
        position: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Camera, SceneError> {
        if let Some(k) = self
            .primitives
            .iter()
            .position(|p| p.contains_strictly(&position))
        {
            return Err(SceneError::InvalidRig(format!(
                "camera is inside primitive {k}"
            )));
        }
        Camera::look_at(
            self.spec.intrinsics(),
            position,
            target,
            Vector3::from(default_down()),
            self.spec.width,
            self.spec.height,
        )
        .map_err(|source| SceneError::Camera {
            view: self.cameras.len(),
            source,
        })
    }

    /// Closest hit along the ray through continuous pixel `pixel`.
    pub fn cast(&self, camera: &Camera, pixel: &Vector2<f64>) -> Option<Hit> {
        let k = camera.intrinsics();
        let local = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
        // With a unit z component in the camera frame, the ray parameter is
        // the depth along the optical axis.
        let dir = camera.rotation().transpose() * local;
        let origin = camera.center();
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = p.intersect(&origin, &dir) {
                if best.is_none_or(|b| t < b.depth) {
                    best = Some(Hit {
                        depth: t,
                        primitive: i,
                        point: origin + dir * t,
                        normal,
                    });
                }
            }
        }
        best
    }

    /// Lambertian colour of a surface point, in `[0, 1]`.
    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        let albedo = self.primitives[hit.primitive].albedo(&hit.point, &hit.normal);
        let lambert = 0.55 + 0.45 * hit.normal.dot(&self.light).abs();
        albedo.map(|a| (a * lambert).clamp(0.0, 1.0))
    }

    /// Supersampled colour image and exact depth at pixel centres.
    pub fn render(&self, camera: &Camera) -> (Image, DepthMap) {
        let (w, h) = (camera.width(), camera.height());
        let s = self.spec.supersample;
        let rows: Vec<(Vec<[f32; 3]>, Vec<f32>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut colors = Vec::with_capacity(w);
                let mut depths = Vec::with_capacity(w);
                for x in 0..w {
                    let mut acc = [0.0f64; 3];
                    for j in 0..s {
                        for i in 0..s {
                            let px = Vector2::new(
                                x as f64 + (i as f64 + 0.5) / s as f64 - 0.5,
                                y as f64 + (j as f64 + 0.5) / s as f64 - 0.5,
                            );
                            if let Some(hit) = self.cast(camera, &px) {
                                let c = self.shade(&hit);
                                for k in 0..3 {
                                    acc[k] += c[k];
                                }
                            }
                        }
                    }
                    let n = (s * s) as f64;
                    colors.push([
                        (acc[0] / n) as f32,
                        (acc[1] / n) as f32,
                        (acc[2] / n) as f32,
                    ]);
                    let depth = self
                        .cast(camera, &Vector2::new(x as f64, y as f64))
                        .map_or(f32::INFINITY, |hit| hit.depth as f32);
                    depths.push(depth);
                }
                (colors, depths)
            })
            .collect();
        let mut image = Image::new(w, h);
        let mut depth = Vec::with_capacity(w * h);
        for (y, (colors, depths)) in rows.into_iter().enumerate() {
            for (x, c) in colors.into_iter().enumerate() {
                image.set(x, y, c);
            }
            depth.extend(depths);
        }
        let depth = DepthMap::new(w, h, depth).expect("one depth per pixel");
        (image, depth)
    }

    /// Renders every rig camera into `dir` as `view{i}.png` and
    /// `view{i}.dpth`, and writes `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<SceneManifest, SceneError> {
        std::fs::create_dir_all(dir)?;
        let mut views = Vec::with_capacity(self.cameras.len());
        for (i, camera) in self.cameras.iter().enumerate() {
            let (image, depth) = self.render(camera);
            let image_name = format!("view{i}.png");
            let depth_name = format!("view{i}.dpth");
            image.save_png(&dir.join(&image_name))?;
            write_depth_file(&dir.join(&depth_name), &depth)?;
            views.push(ViewEntry {
                image: image_name.into(),
                depth: Some(depth_name.into()),
                camera: CameraEntry::from_camera(camera),
            });
        }
        let manifest = SceneManifest {
            views,
            disparity_range: self.spec.disparity_range,
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Builds the scene for `spec` and `seed` and writes it to `dir`.
pub fn generate_synthetic_scene(
    spec: &SceneSpec,
    seed: u64,
    dir: &Path,
) -> Result<SceneManifest, SceneError> {
    SyntheticScene::new(spec.clone(), seed)?.write(dir)
}
