//! RIFF/WAVE reading and writing: 16-bit integer and 32-bit float PCM,
//! mono or interleaved multichannel.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::MultichannelClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Int16,
    Float32,
}

fn spec(channels: usize, sample_rate: u32, encoding: WavEncoding) -> WavSpec {
    match encoding {
        WavEncoding::Int16 => WavSpec {
            channels: channels as u16,
            sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: channels as u16,
            sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    }
}

/// Reads a whole file into memory.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelClip> {
    let mut reader = WavChunkReader::open(path)?;
    let total = reader.total_frames();
    reader
        .next_chunk(total)?
        .ok_or_else(|| Error::data("wave file holds no samples"))
}

pub fn write_wav(
    path: impl AsRef<Path>,
    clip: &MultichannelClip,
    encoding: WavEncoding,
) -> Result<()> {
    let mut writer =
        WavChunkWriter::create(path, clip.num_channels(), clip.sample_rate(), encoding)?;
    writer.write_chunk(clip)?;
    writer.finish()
}

/// Sequential reader returning fixed-size multichannel chunks.
pub struct WavChunkReader {
    reader: WavReader<BufReader<File>>,
    spec: WavSpec,
    remaining: usize,
}

impl WavChunkReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let reader = WavReader::open(path)?;
        let spec = reader.spec();
        match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) | (SampleFormat::Float, 32) => {}
            (fmt, bits) => {
                return Err(Error::data(format!(
                    "unsupported wave encoding {fmt:?}/{bits} bit"
                )));
            }
        }
        let remaining = reader.duration() as usize;
        Ok(Self {
            reader,
            spec,
            remaining,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.spec.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.spec.channels as usize
    }

    pub fn total_frames(&self) -> usize {
        self.reader.duration() as usize
    }

    /// Next `frames` samples per channel, `None` once fewer remain.
    pub fn next_chunk(&mut self, frames: usize) -> Result<Option<MultichannelClip>> {
        if frames == 0 || self.remaining < frames {
            return Ok(None);
        }
        let m = self.num_channels();
        let mut channels = vec![Vec::with_capacity(frames); m];
        let n = frames * m;
        match self.spec.sample_format {
            SampleFormat::Int => {
                for (i, s) in self.reader.samples::<i16>().take(n).enumerate() {
                    channels[i % m].push(s? as f64 / 32768.0);
                }
            }
            SampleFormat::Float => {
                for (i, s) in self.reader.samples::<f32>().take(n).enumerate() {
                    channels[i % m].push(s? as f64);
                }
            }
        }
        self.remaining -= frames;
        MultichannelClip::new(self.spec.sample_rate, channels).map(Some)
    }
}

/// Sequential writer appending multichannel chunks.
pub struct WavChunkWriter {
    writer: WavWriter<BufWriter<File>>,
    encoding: WavEncoding,
    channels: usize,
}

impl WavChunkWriter {
    pub fn create(
        path: impl AsRef<Path>,
        channels: usize,
        sample_rate: u32,
        encoding: WavEncoding,
    ) -> Result<Self> {
        let writer = WavWriter::create(path, spec(channels, sample_rate, encoding))?;
        Ok(Self {
            writer,
            encoding,
            channels,
        })
    }

    pub fn write_chunk(&mut self, clip: &MultichannelClip) -> Result<()> {
        if clip.num_channels() != self.channels {
            return Err(Error::shape("chunk channel count differs from the file"));
        }
        for n in 0..clip.len() {
            for ch in clip.channels() {
                let s = ch[n];
                match self.encoding {
                    WavEncoding::Int16 => {
                        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        self.writer.write_sample(q)?;
                    }
                    WavEncoding::Float32 => self.writer.write_sample(s as f32)?,
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        self.writer.finalize()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int16_and_float_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ch0: Vec<f64> = (0..480).map(|i| ((i as f64) * 0.05).sin() * 0.5).collect();
        let ch1: Vec<f64> = ch0.iter().map(|s| -s).collect();
        let clip = MultichannelClip::new(48_000, vec![ch0, ch1]).unwrap();

        let p16 = dir.path().join("a.wav");
        write_wav(&p16, &clip, WavEncoding::Int16).unwrap();
        let back = read_wav(&p16).unwrap();
        assert_eq!(back.num_channels(), 2);
        assert_eq!(back.sample_rate(), 48_000);
        for (a, b) in back.channel(1).iter().zip(clip.channel(1)) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }

        let pf = dir.path().join("b.wav");
        write_wav(&pf, &clip, WavEncoding::Float32).unwrap();
        let back = read_wav(&pf).unwrap();
        for (a, b) in back.channel(0).iter().zip(clip.channel(0)) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn chunked_reading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let clip = MultichannelClip::new(100, vec![(0..250).map(|i| i as f64 / 1000.0).collect()])
            .unwrap();
        write_wav(&p, &clip, WavEncoding::Float32).unwrap();
        let mut r = WavChunkReader::open(&p).unwrap();
        let a = r.next_chunk(100).unwrap().unwrap();
        let b = r.next_chunk(100).unwrap().unwrap();
        assert!(r.next_chunk(100).unwrap().is_none());
        assert!((a.channel(0)[99] - 0.099).abs() < 1e-7);
        assert!((b.channel(0)[0] - 0.100).abs() < 1e-7);
    }
}
