//! Depth modes, homography-warped candidate patches and patch bundles.
//!
//! For each tile of the rendered novel view we keep the synthesized patch
//! and, for every input view and every mode of the tile centre's ray, the
//! input image warped into the novel view through that mode's plane.
//!
//! Bundles are written as `PBND` files (little-endian):
//!
//! ```text
//! "PBND", u32 bundle count
//! per bundle:  u32 cx, u32 cy, u8 flags (bit 0: unconstrained),
//!              u16 candidate count, f32 x 64*64*3 synthesized patch
//! per candidate: u16 view, u16 level, f64 disparity, f64 x 9 homography
//!              (row-major, novel -> source pixels), f32 x 64*64*3 patch,
//!              u8 x 64*64 mask (1 valid, 0 invalid)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::dpv::io::{read_f32_vec, read_f64, read_u32};
use crate::dpv::DepthProbabilityVolume;
use crate::geometry::{plane_homography, Camera, GeometryError};
use crate::image::Image;
use crate::render::RenderedView;

pub const PATCH_SIZE: usize = 64;
pub const DEFAULT_STRIDE: usize = 32;
pub const BUNDLE_MAGIC: &[u8; 4] = b"PBND";

const FLAG_UNCONSTRAINED: u8 = 1;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("image {width}x{height} is smaller than one {size}x{size} patch")]
    TooSmall {
        width: usize,
        height: usize,
        size: usize,
    },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("bundle file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Peak picking rule for per-ray disparity distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeParams {
    pub min_prob: f32,
    /// Minimum index distance between two kept modes.
    pub min_separation: usize,
    pub max_modes: usize,
}

impl Default for ModeParams {
    fn default() -> Self {
        Self {
            min_prob: 0.05,
            min_separation: 5,
            max_modes: 3,
        }
    }
}

/// Local maxima (`>=` both neighbours) with probability at least
/// `min_prob`, taken greedily by decreasing probability while keeping
/// `min_separation` levels apart. Ties go to the lower index.
pub fn find_modes(ray: &[f32], params: &ModeParams) -> Vec<(usize, f32)> {
    let n = ray.len();
    let mut peaks: Vec<(usize, f32)> = (0..n)
        .filter(|&i| {
            let v = ray[i];
            v >= params.min_prob && (i == 0 || v >= ray[i - 1]) && (i + 1 == n || v >= ray[i + 1])
        })
        .map(|i| (i, ray[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f32)> = Vec::new();
    for (i, p) in peaks {
        if kept.len() == params.max_modes {
            break;
        }
        if kept
            .iter()
            .all(|&(k, _)| k.abs_diff(i) >= params.min_separation)
        {
            kept.push((i, p));
        }
    }
    kept
}

/// A source patch resampled into novel-view coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedPatch {
    /// Maps novel-view pixels to source pixels.
    pub homography: Matrix3<f64>,
    /// `size * size` RGB, black where invalid.
    pub patch: Vec<f32>,
    pub mask: Vec<bool>,
}

impl WarpedPatch {
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Warps `source` onto the window of side `size` centred on `center` in
/// the novel view, through the novel-view plane at `disparity`. The
/// window's top-left pixel is `center - size / 2`.
pub fn extract_warped_patch(
    source: (&Image, &Camera),
    novel: &Camera,
    center: (usize, usize),
    disparity: f64,
    size: usize,
) -> Result<WarpedPatch, GeometryError> {
    let (image, camera) = source;
    let h = plane_homography(camera, novel, disparity)?;
    let mut patch = vec![0.0f32; size * size * 3];
    let mut mask = vec![false; size * size];
    let x0 = center.0 as f64 - (size / 2) as f64;
    let y0 = center.1 as f64 - (size / 2) as f64;
    for j in 0..size {
        for i in 0..size {
            let q = h * Vector3::new(x0 + i as f64, y0 + j as f64, 1.0);
            // The third coordinate carries the sign of the source depth.
            if !(q.z > 1e-12) {
                continue;
            }
            if let Some(c) = image.sample_bilinear(q.x / q.z, q.y / q.z) {
                let k = j * size + i;
                patch[3 * k..3 * k + 3].copy_from_slice(&c);
                mask[k] = true;
            }
        }
    }
    Ok(WarpedPatch {
        homography: h,
        patch,
        mask,
    })
}

/// Tile centres with the given stride, the last row and column shifted
/// inwards so the windows cover the whole image.
pub fn plan_patch_grid(
    width: usize,
    height: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>, PatchError> {
    plan_grid_with_size(width, height, stride, PATCH_SIZE)
}

fn plan_grid_with_size(
    width: usize,
    height: usize,
    stride: usize,
    size: usize,
) -> Result<Vec<(usize, usize)>, PatchError> {
    if width < size || height < size {
        return Err(PatchError::TooSmall {
            width,
            height,
            size,
        });
    }
    if stride == 0 {
        return Err(PatchError::ZeroStride);
    }
    let axis = |len: usize| {
        let half = size / 2;
        let mut out = Vec::new();
        let mut c = half;
        loop {
            out.push(c.min(len - (size - half)));
            if c + (size - half) >= len {
                break;
            }
            c += stride;
        }
        out
    };
    let xs = axis(width);
    let ys = axis(height);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub view: u16,
    pub level: u16,
    pub disparity: f64,
    pub warped: WarpedPatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBundle {
    pub center: (u32, u32),
    /// No depth mode at the centre, or every candidate fell outside its view.
    pub unconstrained: bool,
    pub synthesized: Vec<f32>,
    pub candidates: Vec<Candidate>,
}

/// One bundle per grid centre, in grid order.
pub fn build_bundles(
    rendered: &RenderedView,
    volume: &DepthProbabilityVolume,
    inputs: &[(&Image, &Camera)],
    grid: &[(usize, usize)],
    modes: &ModeParams,
) -> Result<Vec<PatchBundle>, PatchError> {
    let novel = volume.camera();
    grid.par_iter()
        .map(|&(cx, cy)| {
            let ray_modes = find_modes(volume.ray(cx, cy), modes);
            let mut candidates = Vec::new();
            for (view, (image, camera)) in inputs.iter().enumerate() {
                for &(level, _) in &ray_modes {
                    let disparity = volume.range().level(level);
                    let warped = extract_warped_patch(
                        (image, camera),
                        novel,
                        (cx, cy),
                        disparity,
                        PATCH_SIZE,
                    )?;
                    if warped.valid_count() > 0 {
                        candidates.push(Candidate {
                            view: view as u16,
                            level: level as u16,
                            disparity,
                            warped,
                        });
                    }
                }
            }
            Ok(PatchBundle {
                center: (cx as u32, cy as u32),
                unconstrained: candidates.is_empty(),
                synthesized: rendered.image.crop_centered(cx, cy, PATCH_SIZE),
                candidates,
            })
        })
        .collect()
}

fn write_f32s<W: Write>(out: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_bundles<W: Write>(out: &mut W, bundles: &[PatchBundle]) -> Result<(), PatchError> {
    let texels = PATCH_SIZE * PATCH_SIZE;
    out.write_all(BUNDLE_MAGIC)?;
    out.write_all(&(bundles.len() as u32).to_le_bytes())?;
    for b in bundles {
        if b.synthesized.len() != texels * 3 {
            return Err(PatchError::Format(
                "synthesized patch has the wrong size".into(),
            ));
        }
        let count = u16::try_from(b.candidates.len())
            .map_err(|_| PatchError::Format("too many candidates".into()))?;
        out.write_all(&b.center.0.to_le_bytes())?;
        out.write_all(&b.center.1.to_le_bytes())?;
        out.write_all(&[if b.unconstrained {
            FLAG_UNCONSTRAINED
        } else {
            0
        }])?;
        out.write_all(&count.to_le_bytes())?;
        write_f32s(out, &b.synthesized)?;
        for c in &b.candidates {
            if c.warped.patch.len() != texels * 3 || c.warped.mask.len() != texels {
                return Err(PatchError::Format(
                    "candidate patch has the wrong size".into(),
                ));
            }
            out.write_all(&c.view.to_le_bytes())?;
            out.write_all(&c.level.to_le_bytes())?;
            out.write_all(&c.disparity.to_le_bytes())?;
            for i in 0..3 {
                for j in 0..3 {
                    out.write_all(&c.warped.homography[(i, j)].to_le_bytes())?;
                }
            }
            write_f32s(out, &c.warped.patch)?;
            let mask: Vec<u8> = c.warped.mask.iter().map(|&m| m as u8).collect();
            out.write_all(&mask)?;
        }
    }
    Ok(())
}

fn read_u16<R: Read>(input: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    input.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub fn read_bundles<R: Read>(input: &mut R) -> Result<Vec<PatchBundle>, PatchError> {
    let texels = PATCH_SIZE * PATCH_SIZE;
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BUNDLE_MAGIC {
        return Err(PatchError::Format(format!("bad magic {magic:?}")));
    }
    let n = read_u32(input)? as usize;
    let mut bundles = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let cx = read_u32(input)?;
        let cy = read_u32(input)?;
        let mut flags = [0u8];
        input.read_exact(&mut flags)?;
        let count = read_u16(input)? as usize;
        let synthesized = read_f32_vec(input, texels * 3)?;
        let mut candidates = Vec::with_capacity(count);
        for _ in 0..count {
            let view = read_u16(input)?;
            let level = read_u16(input)?;
            let disparity = read_f64(input)?;
            let mut homography = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    homography[(i, j)] = read_f64(input)?;
                }
            }
            let patch = read_f32_vec(input, texels * 3)?;
            let mut mask = vec![0u8; texels];
            input.read_exact(&mut mask)?;
            candidates.push(Candidate {
                view,
                level,
                disparity,
                warped: WarpedPatch {
                    homography,
                    patch,
                    mask: mask.into_iter().map(|m| m != 0).collect(),
                },
            });
        }
        bundles.push(PatchBundle {
            center: (cx, cy),
            unconstrained: flags[0] & FLAG_UNCONSTRAINED != 0,
            synthesized,
            candidates,
        });
    }
    Ok(bundles)
}

pub fn write_bundle_file(path: &Path, bundles: &[PatchBundle]) -> Result<(), PatchError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_bundles(&mut out, bundles)?;
    out.flush()?;
    Ok(())
}

pub fn read_bundle_file(path: &Path) -> Result<Vec<PatchBundle>, PatchError> {
    read_bundles(&mut BufReader::new(File::open(path)?))
}
