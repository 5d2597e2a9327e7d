//! Minimal PCM16 mono RIFF/WAVE writer and reader.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav: {0}")]
    Io(#[from] std::io::Error),
    #[error("wav: malformed file: {0}")]
    Malformed(String),
}

/// Writes a standard 44-byte-header PCM 16-bit mono WAV. Samples are clamped
/// to [-1, 1] and rounded half away from zero.
pub fn write_wav<W: Write>(w: &mut W, samples: &[f64], sample_rate: u32) -> std::io::Result<()> {
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &x in samples {
        let v = (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_wav(path: &Path, samples: &[f64], sample_rate: u32) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav(&mut w, samples, sample_rate)?;
    w.flush()
}

/// Reads a PCM 16-bit mono WAV written by [`write_wav`]; samples map back to
/// [-1, 1] by dividing by 32767.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), WavError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 44 {
        return Err(WavError::Malformed(format!(
            "only {} bytes, need at least 44",
            bytes.len()
        )));
    }
    let tag = |range: std::ops::Range<usize>, expect: &[u8]| -> Result<(), WavError> {
        if &bytes[range.clone()] != expect {
            return Err(WavError::Malformed(format!(
                "bad tag at {}..{}",
                range.start, range.end
            )));
        }
        Ok(())
    };
    tag(0..4, b"RIFF")?;
    tag(8..12, b"WAVE")?;
    tag(12..16, b"fmt ")?;
    tag(36..40, b"data")?;
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    if u16_at(20) != 1 || u16_at(22) != 1 || u16_at(34) != 16 {
        return Err(WavError::Malformed(
            "expected PCM 16-bit mono".to_string(),
        ));
    }
    let sample_rate = u32_at(24);
    let data_len = u32_at(40) as usize;
    if bytes.len() < 44 + data_len || data_len % 2 != 0 {
        return Err(WavError::Malformed(format!(
            "data chunk claims {data_len} bytes, file has {}",
            bytes.len() - 44
        )));
    }
    let samples = bytes[44..44 + data_len]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok((samples, sample_rate))
}
