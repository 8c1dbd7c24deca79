//! Square-root Hann STFT with 75 % overlap, usable one hop at a time.
//!
//! The forward transform is unscaled; the inverse is scaled by `1/fft_size`
//! and the synthesis overlap-add is divided by the constant sum of the
//! squared window over shifts (2 for a periodic Hann at hop = N/4), so
//! `synthesize(analyze(x)) == x` away from the signal edges.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AudioBuffer, Frame, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    /// Prepend `window - hop` zeros so that every hop of input completes a frame.
    pub leading_pad: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_samples: 512, hop_samples: 128, fft_size: 512, leading_pad: true }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        if self.leading_pad {
            self.window_samples - self.hop_samples
        } else {
            0
        }
    }

    /// Frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + self.pad();
        if padded < self.window_samples {
            0
        } else {
            (padded - self.window_samples) / self.hop_samples + 1
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hop_samples == 0
            || self.window_samples == 0
            || self.window_samples > self.fft_size
            || !self.window_samples.is_multiple_of(self.hop_samples)
        {
            return Err(Error::config(format!("unsupported STFT geometry {self:?}")));
        }
        Ok(())
    }

    /// Square root of the periodic Hann window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_samples as f64;
        (0..self.window_samples)
            .map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos()).sqrt())
            .collect()
    }
}

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }
}

/// Streaming analysis: feed any number of samples, get every completed frame.
pub struct StftAnalyzer {
    config: StftConfig,
    channels: usize,
    window: Vec<f64>,
    transforms: Transforms,
    pending: Vec<Vec<f64>>,
    scratch: Vec<Complex64>,
    frames_out: usize,
}

impl StftAnalyzer {
    pub fn new(config: StftConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window: config.window(),
            transforms: Transforms::new(config.fft_size),
            pending: vec![vec![0.0; config.pad()]; channels],
            scratch: vec![Complex64::new(0.0, 0.0); config.fft_size],
            channels,
            config,
            frames_out: 0,
        })
    }

    pub fn frames_emitted(&self) -> usize {
        self.frames_out
    }

    pub fn push(&mut self, audio: &AudioBuffer) -> Result<Vec<Frame>> {
        if audio.num_channels() != self.channels {
            return Err(Error::shape(format!(
                "analyzer expects {} channels, got {}",
                self.channels,
                audio.num_channels()
            )));
        }
        for (p, c) in self.pending.iter_mut().zip(audio.channels()) {
            p.extend_from_slice(c);
        }
        let win = self.config.window_samples;
        let hop = self.config.hop_samples;
        let bins = self.config.num_bins();
        let mut frames = Vec::new();
        let mut offset = 0;
        while self.pending[0].len() - offset >= win {
            let mut frame = Frame::zeros(self.channels, bins);
            for d in 0..self.channels {
                let seg = &self.pending[d][offset..offset + win];
                for (i, z) in self.scratch.iter_mut().enumerate() {
                    let v = if i < win { seg[i] * self.window[i] } else { 0.0 };
                    *z = Complex64::new(v, 0.0);
                }
                self.transforms.forward.process(&mut self.scratch);
                frame.channel_mut(d).copy_from_slice(&self.scratch[..bins]);
            }
            frames.push(frame);
            offset += hop;
        }
        for p in &mut self.pending {
            p.drain(..offset);
        }
        self.frames_out += frames.len();
        Ok(frames)
    }
}

/// Streaming overlap-add synthesis. Output is in input-signal time: the
/// leading pad is dropped.
pub struct StftSynthesizer {
    config: StftConfig,
    channels: usize,
    window: Vec<f64>,
    ola_scale: f64,
    transforms: Transforms,
    ola: Vec<Vec<f64>>,
    scratch: Vec<Complex64>,
    /// Padded-time samples still to drop before emitting.
    skip: usize,
    emitted: usize,
}

impl StftSynthesizer {
    pub fn new(config: StftConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        let window = config.window();
        let hop = config.hop_samples;
        let cola: f64 = (0..config.window_samples / hop).map(|k| window[k * hop].powi(2)).sum::<f64>();
        Ok(Self {
            ola_scale: 1.0 / cola,
            window,
            transforms: Transforms::new(config.fft_size),
            ola: vec![vec![0.0; config.window_samples]; channels],
            scratch: vec![Complex64::new(0.0, 0.0); config.fft_size],
            skip: config.pad(),
            emitted: 0,
            channels,
            config,
        })
    }

    /// Samples emitted so far (input-signal time).
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Overlap-adds one frame and returns the hop of samples that became final.
    pub fn push(&mut self, frame: &Frame) -> Result<Vec<Vec<f64>>> {
        let n = self.config.fft_size;
        let bins = self.config.num_bins();
        if frame.num_channels() != self.channels || frame.num_bins() != bins {
            return Err(Error::shape(format!(
                "synthesizer expects {}x{bins} frames, got {}x{}",
                self.channels,
                frame.num_channels(),
                frame.num_bins()
            )));
        }
        let hop = self.config.hop_samples;
        let win = self.config.window_samples;
        let inv_n = 1.0 / n as f64;
        for d in 0..self.channels {
            let spec = frame.channel(d);
            self.scratch[..bins].copy_from_slice(spec);
            self.scratch[0].im = 0.0;
            if n.is_multiple_of(2) {
                self.scratch[n / 2].im = 0.0;
            }
            for k in bins..n {
                self.scratch[k] = self.scratch[n - k].conj();
            }
            self.transforms.inverse.process(&mut self.scratch);
            let ola = &mut self.ola[d];
            for ((o, z), w) in ola.iter_mut().zip(&self.scratch).zip(&self.window).take(win) {
                *o += z.re * inv_n * w;
            }
        }
        let mut out = vec![Vec::with_capacity(hop); self.channels];
        let drop = self.skip.min(hop);
        self.skip -= drop;
        for (d, o) in out.iter_mut().enumerate() {
            let ola = &mut self.ola[d];
            o.extend(ola[drop..hop].iter().map(|v| v * self.ola_scale));
            ola.copy_within(hop.., 0);
            ola[win - hop..].iter_mut().for_each(|v| *v = 0.0);
        }
        self.emitted += hop - drop;
        Ok(out)
    }

    /// Emits the partially overlapped tail so that exactly `total_len`
    /// samples have been produced overall.
    pub fn finish(&mut self, total_len: usize) -> Vec<Vec<f64>> {
        let need = total_len.saturating_sub(self.emitted);
        let mut out = vec![Vec::with_capacity(need); self.channels];
        for (d, o) in out.iter_mut().enumerate() {
            let avail = &self.ola[d][self.skip.min(self.ola[d].len())..];
            o.extend(avail.iter().take(need).map(|v| v * self.ola_scale));
            o.resize(need, 0.0);
        }
        self.emitted += need;
        out
    }
}

pub fn analyze(audio: &AudioBuffer, config: &StftConfig) -> Result<Spectrogram> {
    if audio.len() < config.window_samples {
        return Err(Error::TooShort(format!(
            "{} samples is shorter than one {}-sample window",
            audio.len(),
            config.window_samples
        )));
    }
    let mut analyzer = StftAnalyzer::new(*config, audio.num_channels())?;
    let frames = analyzer.push(audio)?;
    Spectrogram::from_frames(&frames, audio.len())
}

/// Inverse of [`analyze`]; output length is `spec.num_samples()`.
pub fn synthesize(spec: &Spectrogram, config: &StftConfig) -> Result<AudioBuffer> {
    if spec.num_bins() != config.num_bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, config expects {}",
            spec.num_bins(),
            config.num_bins()
        )));
    }
    let d = spec.num_channels();
    let mut synth = StftSynthesizer::new(*config, d)?;
    let mut out = vec![Vec::with_capacity(spec.num_samples()); d];
    for t in 0..spec.num_frames() {
        for (o, chunk) in out.iter_mut().zip(synth.push(&spec.frame(t))?) {
            o.extend(chunk);
        }
    }
    for (o, chunk) in out.iter_mut().zip(synth.finish(spec.num_samples())) {
        o.extend(chunk);
    }
    for o in &mut out {
        o.truncate(spec.num_samples());
    }
    AudioBuffer::from_channels(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn interior_error_db(x: &[f64], y: &[f64], cfg: &StftConfig) -> f64 {
        let lo = cfg.window_samples;
        let hi = x.len() - 2 * cfg.window_samples;
        let err: f64 = (lo..hi).map(|i| (x[i] - y[i]).powi(2)).sum();
        let sig: f64 = (lo..hi).map(|i| x[i].powi(2)).sum();
        10.0 * (err / sig).log10()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let cfg = StftConfig::default();
        let s = analyze(&AudioBuffer::zeros(2, 4000), &cfg).unwrap();
        assert_eq!(s.energy(), 0.0);
        assert_eq!(synthesize(&s, &cfg).unwrap(), AudioBuffer::zeros(2, 4000));
    }

    #[test]
    fn frame_counts() {
        let cfg = StftConfig::default();
        let x = AudioBuffer::mono(noise(16_000, 1)).unwrap();
        assert_eq!(analyze(&x, &cfg).unwrap().num_frames(), 125);
        let no_pad = StftConfig { leading_pad: false, ..cfg };
        assert_eq!(analyze(&x, &no_pad).unwrap().num_frames(), 122);
        assert_eq!(analyze(&x, &cfg).unwrap().num_bins(), 257);
    }

    #[test]
    fn bin_centred_sinusoid_is_concentrated() {
        let cfg = StftConfig::default();
        let k = 37.0;
        let x: Vec<f64> = (0..8000)
            .map(|n| (2.0 * std::f64::consts::PI * k * n as f64 / 512.0 + 0.3).cos())
            .collect();
        let s = analyze(&AudioBuffer::mono(x).unwrap(), &cfg).unwrap();
        // Frames fully inside the signal: with a sqrt-Hann window the
        // main lobe spreads into the adjacent bins; the bin itself and its
        // two neighbours hold the energy.
        for t in 4..s.num_frames() {
            let row = s.row(0, t);
            let total: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            let lobe: f64 = row[36..=38].iter().map(|z| z.norm_sqr()).sum();
            assert!(lobe / total > 0.99, "frame {t}: {}", lobe / total);
            let peak = row.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
            assert_eq!(peak, 37);
        }
    }

    #[test]
    fn white_noise_round_trip_below_minus_60_db() {
        let cfg = StftConfig::default();
        let x = noise(20_000, 2);
        let y = synthesize(&analyze(&AudioBuffer::mono(x.clone()).unwrap(), &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(interior_error_db(&x, y.channel(0), &cfg) < -60.0);
    }

    #[test]
    fn round_trip_starts_at_sample_zero_with_pad() {
        let cfg = StftConfig::default();
        let x = noise(4096, 3);
        let y = synthesize(&analyze(&AudioBuffer::mono(x.clone()).unwrap(), &cfg).unwrap(), &cfg).unwrap();
        for (i, (a, b)) in x.iter().zip(y.channel(0)).take(2048).enumerate() {
            assert!((a - b).abs() < 1e-12, "sample {i}");
        }
    }

    #[test]
    fn ar2_round_trip_preserves_energy() {
        let cfg = StftConfig::default();
        let e = noise(24_000, 4);
        let mut x = vec![0.0; e.len()];
        for n in 0..e.len() {
            let a1 = if n >= 1 { 1.6 * x[n - 1] } else { 0.0 };
            let a2 = if n >= 2 { -0.81 * x[n - 2] } else { 0.0 };
            x[n] = e[n] + a1 + a2;
        }
        let y = synthesize(&analyze(&AudioBuffer::mono(x.clone()).unwrap(), &cfg).unwrap(), &cfg).unwrap();
        let r = 512..x.len() - 1024;
        let ex: f64 = x[r.clone()].iter().map(|v| v * v).sum();
        let ey: f64 = y.channel(0)[r].iter().map(|v| v * v).sum();
        assert!((10.0 * (ey / ex).log10()).abs() < 0.1);
    }

    #[test]
    fn streaming_analysis_matches_batch() {
        let cfg = StftConfig::default();
        let x = AudioBuffer::from_channels(vec![noise(5000, 5), noise(5000, 6)]).unwrap();
        let batch = analyze(&x, &cfg).unwrap();
        let mut a = StftAnalyzer::new(cfg, 2).unwrap();
        let mut frames = Vec::new();
        let mut pos = 0;
        for chunk in [1, 127, 128, 300, 1000, 17].iter().cycle() {
            if pos >= x.len() {
                break;
            }
            let end = (pos + chunk).min(x.len());
            frames.extend(a.push(&x.slice(pos..end)).unwrap());
            pos = end;
        }
        assert_eq!(Spectrogram::from_frames(&frames, x.len()).unwrap(), batch);
    }

    #[test]
    fn too_short_and_mismatched_inputs() {
        let cfg = StftConfig::default();
        assert!(matches!(analyze(&AudioBuffer::zeros(1, 100), &cfg), Err(Error::TooShort(_))));
        let spec = Spectrogram::zeros(1, 4, 129, 1000);
        assert!(matches!(synthesize(&spec, &cfg), Err(Error::Shape(_))));
    }
}
