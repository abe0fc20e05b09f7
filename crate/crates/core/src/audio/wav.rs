//! Minimal RIFF/WAVE codec: integer PCM (8/16/24-bit) and 32-bit IEEE float,
//! mono or stereo, little-endian.

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::Decode(format!("fmt chunk too short ({} bytes)", body.len())));
    }
    let mut format = u16_at(body, 0);
    let fmt = FmtChunk {
        format,
        channels: u16_at(body, 2),
        sample_rate: u32_at(body, 4),
        block_align: u16_at(body, 12),
        bits: u16_at(body, 14),
    };
    if format == FORMAT_EXTENSIBLE {
        // WAVEFORMATEXTENSIBLE: the sub-format GUID starts with the real tag.
        if body.len() < 40 {
            return Err(Error::Decode("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        format = u16_at(body, 24);
    }
    Ok(FmtChunk { format, ..fmt })
}

/// Decodes WAV bytes into a mono clip. Stereo is averaged.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Decode("missing RIFF/WAVE signature".into()));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let start = at + 8;
        // Streamed writers sometimes leave the data size unset; clamp to what is there.
        let end = start.saturating_add(size).min(bytes.len());
        let body = &bytes[start..end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        at = start.saturating_add(size).saturating_add(size & 1);
    }

    let fmt = fmt.ok_or_else(|| Error::Decode("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Decode("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(Error::UnsupportedFormat(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Decode("sample rate is zero".into()));
    }
    let bytes_per_sample = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 8) => 1,
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (f, b) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {f:#06x} with {b} bits per sample"
            )))
        }
    };
    let frame_bytes = bytes_per_sample * usize::from(fmt.channels);
    if usize::from(fmt.block_align) != frame_bytes {
        return Err(Error::Decode(format!(
            "block align {} does not match {} channel(s) of {} bits",
            fmt.block_align, fmt.channels, fmt.bits
        )));
    }
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }

    let decode_one = |b: &[u8]| -> Result<f32> {
        let v = match bytes_per_sample {
            1 => (f32::from(b[0]) - 128.0) / 128.0,
            2 => f32::from(i16::from_le_bytes([b[0], b[1]])) / 32_768.0,
            3 => {
                let raw = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
                raw as f32 / 8_388_608.0
            }
            _ => {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if !v.is_finite() {
                    return Err(Error::Decode("non-finite float sample".into()));
                }
                v.clamp(-1.0, 1.0)
            }
        };
        Ok(v)
    };

    let channels = usize::from(fmt.channels);
    let mut samples = Vec::with_capacity(frames);
    for frame in data.chunks_exact(frame_bytes) {
        let mut acc = 0.0f32;
        for ch in frame.chunks_exact(bytes_per_sample) {
            acc += decode_one(ch)?;
        }
        samples.push(acc / channels as f32);
    }
    AudioClip::with_bit_depth(samples, fmt.sample_rate, fmt.bits)
}

/// Encodes a clip as mono WAV. `bit_depth` must be 16 (integer) or 32 (float).
pub fn encode_wav(clip: &AudioClip, bit_depth: u16) -> Result<Vec<u8>> {
    let (format, bytes_per_sample) = match bit_depth {
        16 => (FORMAT_PCM, 2u16),
        32 => (FORMAT_IEEE_FLOAT, 4u16),
        other => {
            return Err(Error::Parameter(format!(
                "bit depth {other} not supported for writing (use 16 or 32)"
            )))
        }
    };
    if clip.is_empty() {
        return Err(Error::Precondition("cannot write an empty clip".into()));
    }
    let data_len = clip.len() * usize::from(bytes_per_sample);
    let data_len_u32 = u32::try_from(data_len)
        .map_err(|_| Error::Parameter("clip too long for a RIFF container".into()))?;
    let rate = clip.sample_rate_hz();

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len_u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * u32::from(bytes_per_sample)).to_le_bytes());
    out.extend_from_slice(&bytes_per_sample.to_le_bytes());
    out.extend_from_slice(&bit_depth.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len_u32.to_le_bytes());
    for &s in clip.samples() {
        if bit_depth == 16 {
            let q = (f64::from(s) * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        } else {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    Ok(out)
}
