//! Minimal 16-bit PCM mono WAV reading and writing, enough to realize
//! simulated mixtures as audio.

use std::fs;
use std::io;
use std::path::Path;

use super::AudioBuffer;

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

/// Read a 16-bit PCM mono WAV file.
pub fn read_wav_mono_16(path: impl AsRef<Path>) -> io::Result<AudioBuffer> {
    let data = fs::read(path)?;
    if data.len() < 44 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // (tag, channels, rate, bits)
    let mut samples: Option<Vec<f32>> = None;
    while pos + 8 <= data.len() {
        let id = &data[pos..pos + 4];
        let size = le_u32(&data[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        if body + size > data.len() {
            return Err(bad("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("short fmt chunk"));
                }
                format = Some((
                    le_u16(&data[body..]),
                    le_u16(&data[body + 2..]),
                    le_u32(&data[body + 4..]),
                    le_u16(&data[body + 14..]),
                ));
            }
            b"data" => {
                let mut out = Vec::with_capacity(size / 2);
                for chunk in data[body..body + size].chunks_exact(2) {
                    let v = i16::from_le_bytes([chunk[0], chunk[1]]);
                    out.push(v as f32 / 32768.0);
                }
                samples = Some(out);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let (tag, channels, rate, bits) = format.ok_or_else(|| bad("missing fmt chunk"))?;
    if tag != 1 || bits != 16 {
        return Err(bad("only 16-bit PCM is supported"));
    }
    if channels != 1 {
        return Err(bad("only mono is supported"));
    }
    Ok(AudioBuffer {
        samples: samples.ok_or_else(|| bad("missing data chunk"))?,
        sample_rate: rate,
    })
}

/// Write a 16-bit PCM mono WAV file; samples are clipped to [-1, 1].
pub fn write_wav_mono_16(path: impl AsRef<Path>, audio: &AudioBuffer) -> io::Result<()> {
    let n = audio.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for s in &audio.samples {
        let scaled = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&scaled.to_le_bytes());
    }
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let buf = AudioBuffer {
            samples: (0..200).map(|i| ((i as f32) * 0.05).sin() * 0.8).collect(),
            sample_rate: 8000,
        };
        write_wav_mono_16(&path, &buf).unwrap();
        let back = read_wav_mono_16(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.samples.len(), 200);
        for (a, b) in buf.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }
}
