//! `DPV1` volume files.
//!
//! Little-endian layout:
//!
//! | field                         | type            |
//! |-------------------------------|-----------------|
//! | magic `DPV1`                  | 4 bytes         |
//! | width, height, levels         | u32 x 3         |
//! | d_min, d_max                  | f64 x 2         |
//! | rotation (row-major)          | f64 x 9         |
//! | translation                   | f64 x 3         |
//! | fx, fy, cx, cy                | f64 x 4         |
//! | values in (y, x, level) order | f32 x h*w*n_d   |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{DepthProbabilityVolume, DpvError};
use crate::geometry::{Camera, DisparityRange, Intrinsics};

pub const VOLUME_MAGIC: &[u8; 4] = b"DPV1";

pub fn write_volume<W: Write>(out: &mut W, volume: &DepthProbabilityVolume) -> std::io::Result<()> {
    let cam = volume.camera();
    out.write_all(VOLUME_MAGIC)?;
    for v in [volume.width(), volume.height(), volume.levels()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    out.write_all(&volume.range().d_min().to_le_bytes())?;
    out.write_all(&volume.range().d_max().to_le_bytes())?;
    write_camera(out, cam)?;
    let mut buf = Vec::with_capacity(volume.values().len() * 4);
    for v in volume.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) fn write_camera<W: Write>(out: &mut W, cam: &Camera) -> std::io::Result<()> {
    let r = cam.rotation();
    for i in 0..3 {
        for j in 0..3 {
            out.write_all(&r[(i, j)].to_le_bytes())?;
        }
    }
    for v in cam.translation().iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    let k = cam.intrinsics();
    for v in [k.fx, k.fy, k.cx, k.cy] {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(input: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f32_vec<R: Read>(input: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    input.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn read_camera<R: Read>(input: &mut R, width: usize, height: usize) -> Result<Camera, DpvError> {
    let mut r = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            r[(i, j)] = read_f64(input)?;
        }
    }
    let t = Vector3::new(read_f64(input)?, read_f64(input)?, read_f64(input)?);
    let k = Intrinsics::new(
        read_f64(input)?,
        read_f64(input)?,
        read_f64(input)?,
        read_f64(input)?,
    );
    Ok(Camera::new(k, r, t, width, height)?)
}

/// Reads a volume. The distribution invariants are checked.
pub fn read_volume<R: Read>(input: &mut R) -> Result<DepthProbabilityVolume, DpvError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != VOLUME_MAGIC {
        return Err(DpvError::Format(format!("bad magic {magic:?}")));
    }
    let w = read_u32(input)? as usize;
    let h = read_u32(input)? as usize;
    let nd = read_u32(input)? as usize;
    let d_min = read_f64(input)?;
    let d_max = read_f64(input)?;
    let range = DisparityRange::new(d_min, d_max, nd)?;
    let camera = read_camera(input, w, h)?;
    let values = read_f32_vec(input, w * h * nd)?;
    DepthProbabilityVolume::new(camera, range, values)
}

pub fn write_volume_file(path: &Path, volume: &DepthProbabilityVolume) -> Result<(), DpvError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_volume(&mut out, volume)?;
    out.flush()?;
    Ok(())
}

pub fn read_volume_file(path: &Path) -> Result<DepthProbabilityVolume, DpvError> {
    read_volume(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume() -> DepthProbabilityVolume {
        let cam = Camera::look_at(
            Intrinsics::new(30.0, 31.0, 2.5, 1.5),
            Vector3::new(0.1, 0.2, -0.3),
            Vector3::new(0.0, 0.0, 4.0),
            Vector3::y(),
            5,
            3,
        )
        .unwrap();
        let range = DisparityRange::new(0.125, 0.5, 4).unwrap();
        DepthProbabilityVolume::one_hot(cam, range, |x, y| Some((x + y) % 4))
    }

    #[test]
    fn header_layout() {
        let vol = volume();
        let mut bytes = Vec::new();
        write_volume(&mut bytes, &vol).unwrap();
        assert_eq!(&bytes[..4], b"DPV1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.125);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.5);
        let header = 4 + 12 + 16 + 16 * 8;
        assert_eq!(bytes.len(), header + 5 * 3 * 4 * 4);
        // fx sits right after rotation and translation
        assert_eq!(
            f64::from_le_bytes(bytes[32 + 96..32 + 104].try_into().unwrap()),
            30.0
        );
        assert_eq!(read_volume(&mut bytes.as_slice()).unwrap(), vol);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        write_volume(&mut bytes, &volume()).unwrap();
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(
            read_volume(&mut bad.as_slice()),
            Err(DpvError::Format(_))
        ));
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            read_volume(&mut bytes.as_slice()),
            Err(DpvError::Io(_))
        ));
    }
}
