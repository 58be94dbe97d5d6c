//! `DPTH` depth maps: magic, u32 width, u32 height, u32 reserved (0), then
//! row-major little-endian f32 depths. Pixels without a surface hold +inf.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SceneError;
use crate::dpv::io::{read_f32_vec, read_u32};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// Per-pixel depth along the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, SceneError> {
        if data.len() != width * height {
            return Err(SceneError::Format(format!(
                "depth map has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Finite positive depths, as `f64`.
    pub fn finite_depths(&self) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .filter(|d| d.is_finite() && **d > 0.0)
            .map(|&d| d as f64)
    }
}

pub fn write_depth<W: Write>(out: &mut W, depth: &DepthMap) -> std::io::Result<()> {
    out.write_all(DEPTH_MAGIC)?;
    out.write_all(&(depth.width as u32).to_le_bytes())?;
    out.write_all(&(depth.height as u32).to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(depth.data.len() * 4);
    for v in &depth.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_depth<R: Read>(input: &mut R) -> Result<DepthMap, SceneError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != DEPTH_MAGIC {
        return Err(SceneError::Format(format!("bad depth magic {magic:?}")));
    }
    let w = read_u32(input)? as usize;
    let h = read_u32(input)? as usize;
    let _reserved = read_u32(input)?;
    let data = read_f32_vec(input, w * h)?;
    DepthMap::new(w, h, data)
}

pub fn write_depth_file(path: &Path, depth: &DepthMap) -> Result<(), SceneError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_depth(&mut out, depth)?;
    out.flush()?;
    Ok(())
}

pub fn read_depth_file(path: &Path) -> Result<DepthMap, SceneError> {
    let file = File::open(path).map_err(|e| SceneError::Missing {
        path: path.display().to_string(),
        source: e,
    })?;
    read_depth(&mut BufReader::new(file))
}
