//! Binary feature container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "OKWF"
//! 4       2     version (u16 LE)
//! 6       2     n_mels (u16 LE)
//! 8       4     n_frames (u32 LE)
//! 12      4     frame_rate (f32 LE)
//! 16      4*n   values, row-major (n_mels, n_frames), f32 LE
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::MelSpectrogram;

pub const FEATURE_MAGIC: &[u8; 4] = b"OKWF";
pub const FEATURE_VERSION: u16 = 1;

pub fn write_features<W: Write>(mut w: W, s: &MelSpectrogram) -> Result<()> {
    let n_mels = u16::try_from(s.n_mels())
        .map_err(|_| Error::Domain(format!("n_mels {} exceeds u16", s.n_mels())))?;
    let n_frames = u32::try_from(s.n_frames())
        .map_err(|_| Error::Domain(format!("n_frames {} exceeds u32", s.n_frames())))?;
    let mut buf = Vec::with_capacity(16 + 4 * s.values().len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&n_mels.to_le_bytes());
    buf.extend_from_slice(&n_frames.to_le_bytes());
    buf.extend_from_slice(&s.frame_rate().to_le_bytes());
    for v in s.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
        .map_err(|e| Error::io("writing feature file", e))
}

pub fn read_features<R: Read>(mut r: R) -> Result<MelSpectrogram> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("reading feature file", e))?;
    let bad = |reason: String| Error::Format {
        what: "feature file",
        reason,
    };
    if bytes.len() < 16 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n_mels = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let n_frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let frame_rate = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let body = &bytes[16..];
    if body.len() != 4 * n_mels * n_frames {
        return Err(bad(format!(
            "expected {} value bytes, found {}",
            4 * n_mels * n_frames,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(values, n_mels, n_frames, frame_rate)
}
