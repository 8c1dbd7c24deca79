//! WAV file I/O. Only 16 kHz material is accepted.

use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AudioBuffer, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Pcm16,
    #[default]
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        HoundFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        HoundFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in out.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    AudioBuffer::from_channels(out)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: SampleFormat) -> Result<()> {
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for n in 0..audio.len() {
        for d in 0..audio.num_channels() {
            let v = audio.channel(d)[n];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                SampleFormat::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Rounds every sample to the nearest `f32`, i.e. what a float WAV round trip keeps.
pub fn quantize_f32(audio: &AudioBuffer) -> AudioBuffer {
    let chans = audio
        .channels()
        .map(|c| c.iter().map(|&v| v as f32 as f64).collect())
        .collect();
    AudioBuffer::from_channels(chans).expect("rounding preserves shape")
}
