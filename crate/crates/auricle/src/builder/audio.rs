//! Peak-level measurement and minimal waveform loading (raw f32 and PCM/float
//! WAV).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Floor applied when the peak magnitude is at or below 1e-6 full scale.
pub const DBFS_FLOOR: f64 = -120.0;

/// Peak level in dBFS: 20*log10(max |sample|), with silence clamped to
/// [`DBFS_FLOOR`].
pub fn peak_dbfs(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("peak_dbfs on empty segment".into()));
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak <= 1e-6 {
        return Ok(DBFS_FLOOR);
    }
    Ok((20.0 * peak.log10()).max(DBFS_FLOOR))
}

/// Loads a waveform file as mono f64 samples. Raw files hold little-endian
/// f32 samples; `.wav` files may be 16-bit PCM or 32-bit IEEE float and are
/// averaged to mono.
pub fn load_waveform(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
        decode_wav(path, &bytes)
    } else {
        decode_raw_f32(path, &bytes)
    }
}

fn decode_raw_f32(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("raw f32 file length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn decode_wav(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };

    let mut pos = 12usize;
    let mut format: Option<(u16, u16, u16)> = None; // (audio_format, channels, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| err("chunk overflow".into()))?;
        if body_end > bytes.len() {
            return Err(err(format!("chunk '{}' overruns file", String::from_utf8_lossy(id))));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(err("fmt chunk too short".into()));
                }
                let audio_format = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let bits = u16::from_le_bytes([body[14], body[15]]);
                format = Some((audio_format, channels, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let (audio_format, channels, bits) = format.ok_or_else(|| err("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| err("missing data chunk".into()))?;
    if channels == 0 {
        return Err(err("zero channels".into()));
    }
    let ch = channels as usize;

    let interleaved: Vec<f64> = match (audio_format, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        other => return Err(err(format!("unsupported wav format {other:?}"))),
    };

    if ch == 1 {
        return Ok(interleaved);
    }
    Ok(interleaved
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f64>() / ch as f64)
        .collect())
}

/// Slices a clip waveform to the [start_s, end_s) segment by sample index.
pub fn slice_segment(
    clip: &[f64],
    sample_rate_hz: f64,
    start_s: f64,
    end_s: f64,
    clip_id: &str,
) -> Result<Vec<f64>> {
    let start = (start_s * sample_rate_hz).round() as usize;
    let end = (end_s * sample_rate_hz).round() as usize;
    if end > clip.len() || start >= end {
        return Err(Error::MissingData {
            clip_id: clip_id.to_string(),
            msg: format!(
                "segment [{start_s}, {end_s})s maps to samples [{start}, {end}) but clip has {}",
                clip.len()
            ),
        });
    }
    Ok(clip[start..end].to_vec())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_clamps_to_floor() {
        assert_eq!(peak_dbfs(&[0.0; 16]).unwrap(), -120.0);
    }

    #[test]
    fn full_scale_is_zero_dbfs() {
        assert_eq!(peak_dbfs(&[0.1, -1.0, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn half_scale_analytic() {
        let db = peak_dbfs(&[0.5, -0.2]).unwrap();
        assert!((db - (-6.0206)).abs() < 0.0005, "db = {db}");
    }

    #[test]
    fn empty_segment_is_error() {
        assert!(peak_dbfs(&[]).is_err());
    }

    #[test]
    fn scaling_down_decreases_level() {
        let samples = [0.9, -0.4, 0.2];
        let scaled: Vec<f64> = samples.iter().map(|s| s * 0.25).collect();
        assert!(peak_dbfs(&scaled).unwrap() < peak_dbfs(&samples).unwrap());
    }

    #[test]
    fn raw_f32_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.raw");
        let samples = [0.5f32, -0.25, 1.0];
        let mut bytes = Vec::new();
        for s in samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let loaded = load_waveform(&path).unwrap();
        assert_eq!(loaded, vec![0.5, -0.25, 1.0]);
    }

    #[test]
    fn wav_pcm16_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        let bytes = test_wav::encode_pcm16(&[16384, -16384, 0], 8000);
        std::fs::write(&path, bytes).unwrap();
        let loaded = load_waveform(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert!((loaded[0] - 0.5).abs() < 1e-4);
        assert!((loaded[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn segment_slicing_bounds_checked() {
        let clip: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let seg = slice_segment(&clip, 100.0, 0.2, 0.5, "c1").unwrap();
        assert_eq!(seg.len(), 30);
        assert!(slice_segment(&clip, 100.0, 0.9, 1.5, "c1").is_err());
    }
}
