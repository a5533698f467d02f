use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"AVFS";
pub const FEATURE_VERSION: u32 = 1;

/// Row-major `frames × width` matrix of 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    pub frames: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(frames: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * width {
            return Err(Error::invalid(
                "frame_matrix",
                format!(
                    "{frames}×{width} needs {} values, got {}",
                    frames * width,
                    data.len()
                ),
            ));
        }
        Ok(FrameMatrix {
            frames,
            width,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

/// Writes `"AVFS"`, version, frame count and width (u32 LE each), then the
/// values as f32 LE.
pub fn write_features(path: &Path, m: &FrameMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16 + 4 * m.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(m.width as u32).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FrameMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "file shorter than the 16-byte header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(path, "bad magic, expected AVFS"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let (frames, width) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != 4 * frames * width {
        return Err(Error::format(
            path,
            format!(
                "{frames}×{width} header needs {} data bytes, found {}",
                4 * frames * width,
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FrameMatrix {
        frames,
        width,
        data,
    })
}
