//! RGB float images and the sampling primitives shared by the kernels.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image buffer has {got} values, expected {expected}")]
    BadBufferLength { expected: usize, got: usize },
    #[error("image value {0} outside [0, 1]")]
    OutOfRange(f32),
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
}

/// Three-channel image with values in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::BadBufferLength {
                expected: width * height * 3,
                got: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::OutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel-centre coordinates. `None` outside
    /// `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f32; 3]> {
        let (x0, y0, fx, fy) = bilinear_cell(x, y, self.width, self.height)?;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0.0f32; 3];
        for ch in 0..3 {
            let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
            let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
            out[ch] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
        Some(out)
    }

    /// Rec. 601 luma plane.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// `size x size` crop whose top-left corner is `center - size/2`; pixels
    /// outside the image are black.
    pub fn crop_centered(&self, cx: usize, cy: usize, size: usize) -> Vec<f32> {
        let half = (size / 2) as i64;
        let mut out = vec![0.0f32; size * size * 3];
        for j in 0..size {
            let y = cy as i64 - half + j as i64;
            if y < 0 || y >= self.height as i64 {
                continue;
            }
            for i in 0..size {
                let x = cx as i64 - half + i as i64;
                if x < 0 || x >= self.width as i64 {
                    continue;
                }
                let px = self.get(x as usize, y as usize);
                let o = (j * size + i) * 3;
                out[o..o + 3].copy_from_slice(&px);
            }
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)
            .map_err(|source| ImageError::Read {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        save_rgb8(path, self.width, self.height, &self.to_rgb8())
    }

    /// Round-trips through 8-bit quantisation, as a PNG write/read would.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| quantize(v) as f32 / 255.0)
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Samples this close outside the image are snapped onto the border, so
/// round-off in an identity warp does not lose the last row and column.
const BORDER_SLACK: f64 = 1e-9;

/// Integer cell and fractional offsets for a bilinear lookup.
#[inline]
pub(crate) fn bilinear_cell(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize, f64, f64)> {
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    if !(x >= -BORDER_SLACK
        && y >= -BORDER_SLACK
        && x <= xmax + BORDER_SLACK
        && y <= ymax + BORDER_SLACK)
    {
        return None;
    }
    let (x, y) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
    let x0 = x.floor();
    let y0 = y.floor();
    Some((x0 as usize, y0 as usize, x - x0, y - y0))
}

/// Bilinear sample of a single-channel plane.
#[inline]
pub(crate) fn sample_plane(
    plane: &[f32],
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> Option<f32> {
    let (x0, y0, fx, fy) = bilinear_cell(x, y, width, height)?;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let a = plane[y0 * width + x0] as f64;
    let b = plane[y0 * width + x1] as f64;
    let c = plane[y1 * width + x0] as f64;
    let d = plane[y1 * width + x1] as f64;
    let top = a * (1.0 - fx) + b * fx;
    let bottom = c * (1.0 - fx) + d * fx;
    Some((top * (1.0 - fy) + bottom * fy) as f32)
}

pub fn save_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), ImageError> {
    image::save_buffer(
        path,
        data,
        width as u32,
        height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), ImageError> {
    image::save_buffer(
        path,
        data,
        width as u32,
        height as u32,
        image::ColorType::L8,
    )
    .map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let img = image::open(path)
        .map_err(|source| ImageError::Read {
            path: path.display().to_string(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}
