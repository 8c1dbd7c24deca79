//! Time-domain and time-frequency signal containers, room impulse responses
//! and the listener-dependent target construction built on them.

use std::ops::Range;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate the engine accepts.
pub const SAMPLE_RATE: u32 = 16_000;
/// STFT hop in samples (8 ms at 16 kHz). Frame-valued parameters are
/// converted to samples with this factor.
pub const HOP_SAMPLES: usize = 128;

/// Real multichannel audio, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl AudioBuffer {
    pub fn from_channels(channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Empty("audio buffer needs at least one channel".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("all channels must have the same length"));
        }
        let count = channels.len();
        let data: Vec<f64> = channels.into_iter().flatten().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self { channels: count, len, data })
    }

    pub fn mono(samples: Vec<f64>) -> Result<Self> {
        Self::from_channels(vec![samples])
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self { channels: channels.max(1), len, data: vec![0.0; channels.max(1) * len] }
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.len as f64 / SAMPLE_RATE as f64
    }

    pub fn channel(&self, d: usize) -> &[f64] {
        &self.data[d * self.len..(d + 1) * self.len]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        &mut self.data[d * self.len..(d + 1) * self.len]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.channels).map(move |d| self.channel(d))
    }

    pub fn to_channels(&self) -> Vec<Vec<f64>> {
        self.channels().map(<[f64]>::to_vec).collect()
    }

    /// Samples `range` of every channel.
    pub fn slice(&self, range: Range<usize>) -> AudioBuffer {
        let range = range.start.min(self.len)..range.end.min(self.len);
        let n = range.len();
        let mut out = AudioBuffer::zeros(self.channels, n);
        for d in 0..self.channels {
            out.channel_mut(d).copy_from_slice(&self.channel(d)[range.clone()]);
        }
        out
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer { data: self.data.iter().map(|x| x * gain).collect(), channels: self.channels, len: self.len }
    }

    pub fn add(&self, other: &AudioBuffer) -> Result<AudioBuffer> {
        if self.channels != other.channels || self.len != other.len {
            return Err(Error::shape("added buffers differ in shape"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(AudioBuffer { data, channels: self.channels, len: self.len })
    }

    /// Appends `other` in time. Channel counts must agree. Copies the whole
    /// buffer, so build long signals per channel instead of appending in a loop.
    pub fn append(&mut self, other: &AudioBuffer) -> Result<()> {
        if other.channels != self.channels {
            return Err(Error::shape("appended buffer has a different channel count"));
        }
        let len = self.len + other.len;
        let mut data = Vec::with_capacity(self.channels * len);
        for (mine, theirs) in self.channels().zip(other.channels()) {
            data.extend_from_slice(mine);
            data.extend_from_slice(theirs);
        }
        self.data = data;
        self.len = len;
        Ok(())
    }
}

/// A `D x F` complex STFT frame. Bin-contiguous per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    channels: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl Frame {
    pub fn zeros(channels: usize, bins: usize) -> Self {
        Self { channels, bins, data: vec![Complex64::new(0.0, 0.0); channels * bins] }
    }

    pub fn from_vec(channels: usize, bins: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != channels * bins {
            return Err(Error::shape(format!(
                "frame data has {} values, expected {channels}x{bins}",
                data.len()
            )));
        }
        Ok(Self { channels, bins, data })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn get(&self, d: usize, f: usize) -> Complex64 {
        self.data[d * self.bins + f]
    }

    #[inline]
    pub fn set(&mut self, d: usize, f: usize, value: Complex64) {
        self.data[d * self.bins + f] = value;
    }

    pub fn channel(&self, d: usize) -> &[Complex64] {
        &self.data[d * self.bins..(d + 1) * self.bins]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [Complex64] {
        &mut self.data[d * self.bins..(d + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn magnitude(&self, d: usize) -> Vec<f64> {
        self.channel(d).iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, c: Complex64) -> Frame {
        Frame { data: self.data.iter().map(|z| z * c).collect(), ..self.clone() }
    }
}

/// Complex STFT tensor `D x T x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    channels: usize,
    frames: usize,
    bins: usize,
    /// Length of the time-domain signal the frames were computed from.
    num_samples: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, bins: usize, num_samples: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            num_samples,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    /// Stacks frames in time order.
    pub fn from_frames(frames: &[Frame], num_samples: usize) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::Empty("no frames".into()))?;
        let (channels, bins) = (first.channels, first.bins);
        let mut spec = Self::zeros(channels, frames.len(), bins, num_samples);
        for (t, fr) in frames.iter().enumerate() {
            spec.set_frame(t, fr)?;
        }
        Ok(spec)
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn set_num_samples(&mut self, n: usize) {
        self.num_samples = n;
    }

    #[inline]
    fn idx(&self, d: usize, t: usize, f: usize) -> usize {
        (d * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, d: usize, t: usize, f: usize) -> Complex64 {
        self.data[self.idx(d, t, f)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, t: usize, f: usize, value: Complex64) {
        let i = self.idx(d, t, f);
        self.data[i] = value;
    }

    /// Bins of channel `d` at frame `t`.
    pub fn row(&self, d: usize, t: usize) -> &[Complex64] {
        let i = self.idx(d, t, 0);
        &self.data[i..i + self.bins]
    }

    pub fn frame(&self, t: usize) -> Frame {
        let mut fr = Frame::zeros(self.channels, self.bins);
        for d in 0..self.channels {
            fr.channel_mut(d).copy_from_slice(self.row(d, t));
        }
        fr
    }

    pub fn set_frame(&mut self, t: usize, frame: &Frame) -> Result<()> {
        if frame.channels != self.channels || frame.bins != self.bins {
            return Err(Error::shape("frame does not match spectrogram shape"));
        }
        for d in 0..self.channels {
            let i = self.idx(d, t, 0);
            self.data[i..i + self.bins].copy_from_slice(frame.channel(d));
        }
        Ok(())
    }

    /// Single-channel view of channel `d`.
    pub fn channel(&self, d: usize) -> Spectrogram {
        let start = self.idx(d, 0, 0);
        Spectrogram {
            channels: 1,
            frames: self.frames,
            bins: self.bins,
            num_samples: self.num_samples,
            data: self.data[start..start + self.frames * self.bins].to_vec(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.frames).map(move |t| self.frame(t))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Decay analysis from the Schroeder energy decay curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayTimes {
    /// Reverberation time from a linear fit of the decay curve between -5 and -35 dB.
    pub t60: f64,
    /// Time after `start` at which the decay curve first falls 30 dB.
    pub t30: f64,
}

/// Schroeder backward integration of `energy` (squared taps) starting at
/// index `start`. Returns `None` for silent responses.
pub fn decay_times(energy: &[f64], start: usize) -> Option<DecayTimes> {
    let e = energy.get(start..)?;
    let total: f64 = e.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let fs = SAMPLE_RATE as f64;
    let mut edc_db = Vec::with_capacity(e.len());
    let mut acc = 0.0;
    for &v in e.iter().rev() {
        acc += v;
        edc_db.push(10.0 * (acc / total).max(1e-300).log10());
    }
    edc_db.reverse();

    let t30_idx = edc_db.iter().position(|&db| db <= -30.0);
    let last_nonzero = e.iter().rposition(|&v| v > 0.0).unwrap_or(0);
    let t30 = t30_idx.unwrap_or(last_nonzero) as f64 / fs;

    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &db) in edc_db.iter().enumerate() {
        if (-35.0..=-5.0).contains(&db) {
            let x = i as f64 / fs;
            n += 1.0;
            sx += x;
            sy += db;
            sxx += x * x;
            sxy += x * db;
        }
    }
    let denom = n * sxx - sx * sx;
    let slope = if n >= 2.0 && denom > 0.0 { (n * sxy - sx * sy) / denom } else { 0.0 };
    let t60 = if slope < 0.0 { -60.0 / slope } else { last_nonzero as f64 / fs };
    Some(DecayTimes { t60, t30: t30.min(t60) })
}

/// Multichannel room impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomImpulseResponse {
    taps: Vec<Vec<f64>>,
    /// Direct-path arrival in samples (earliest over channels).
    pub propagation_delay: usize,
    pub t60: f64,
    pub t30: f64,
}

impl RoomImpulseResponse {
    pub fn new(taps: Vec<Vec<f64>>, propagation_delay: usize, t60: f64, t30: f64) -> Result<Self> {
        if taps.is_empty() || taps[0].is_empty() {
            return Err(Error::Empty("room impulse response has no taps".into()));
        }
        let n = taps[0].len();
        if taps.iter().any(|c| c.len() != n) {
            return Err(Error::shape("RIR channels differ in length"));
        }
        if taps.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("RIR taps".into()));
        }
        if propagation_delay >= n {
            return Err(Error::shape(format!(
                "propagation delay {propagation_delay} not below RIR length {n}"
            )));
        }
        if t30 > t60 {
            return Err(Error::config(format!("t30 {t30} exceeds t60 {t60}")));
        }
        Ok(Self { taps, propagation_delay, t60, t30 })
    }

    /// Builds a response and measures its decay times from the taps.
    pub fn from_taps(taps: Vec<Vec<f64>>, propagation_delay: usize) -> Result<Self> {
        let n = taps.first().map_or(0, Vec::len);
        let mut energy = vec![0.0; n];
        for c in &taps {
            for (e, x) in energy.iter_mut().zip(c) {
                *e += x * x;
            }
        }
        let decay = decay_times(&energy, propagation_delay.min(n.saturating_sub(1)))
            .unwrap_or(DecayTimes { t60: 0.0, t30: 0.0 });
        Self::new(taps, propagation_delay, decay.t60, decay.t30)
    }

    /// Unit impulse at `delay` on every channel.
    pub fn impulse(channels: usize, len: usize, delay: usize) -> Result<Self> {
        let mut taps = vec![vec![0.0; len]; channels];
        for c in &mut taps {
            if let Some(x) = c.get_mut(delay) {
                *x = 1.0;
            }
        }
        Self::from_taps(taps, delay)
    }

    pub fn num_channels(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn taps(&self) -> &[Vec<f64>] {
        &self.taps
    }

    pub fn channel(&self, d: usize) -> &[f64] {
        &self.taps[d]
    }

    /// Tap energy summed over channels within `range` (clipped to the RIR).
    pub fn energy_in(&self, range: Range<usize>) -> f64 {
        let range = range.start.min(self.len())..range.end.min(self.len());
        self.taps.iter().map(|c| c[range.clone()].iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn energy(&self) -> f64 {
        self.energy_in(0..self.len())
    }

    /// Copy keeping only taps in `range`.
    pub fn windowed(&self, range: Range<usize>) -> RoomImpulseResponse {
        let taps = self
            .taps
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(i, &x)| if range.contains(&i) { x } else { 0.0 })
                    .collect()
            })
            .collect();
        RoomImpulseResponse { taps, ..self.clone() }
    }

    /// Direct-to-reverberant ratio in dB. The direct part is the window of
    /// `direct_halfwidth` samples on either side of each channel's peak.
    pub fn drr_db(&self, direct_halfwidth: usize) -> f64 {
        let (mut direct, mut rest) = (0.0, 0.0);
        for c in &self.taps {
            let peak = c
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map_or(0, |(i, _)| i);
            let lo = peak.saturating_sub(direct_halfwidth);
            let hi = peak + direct_halfwidth + 1;
            for (i, x) in c.iter().enumerate() {
                if (lo..hi).contains(&i) {
                    direct += x * x;
                } else {
                    rest += x * x;
                }
            }
        }
        10.0 * (direct / rest).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ListenerProfile {
    /// Hearing aid: direct path plus early reflections are the target.
    #[default]
    Ha,
    /// Cochlear implant: only the direct path (first 16 ms) is the target.
    Ci,
}

impl ListenerProfile {
    pub fn target_cutoff_ms(self) -> f64 {
        match self {
            ListenerProfile::Ha => 40.0,
            ListenerProfile::Ci => 16.0,
        }
    }

    /// Prediction delay in STFT frames.
    pub fn delta_frames(self) -> usize {
        match self {
            ListenerProfile::Ha => 5,
            ListenerProfile::Ci => 2,
        }
    }

    pub fn cutoff_samples(self) -> usize {
        (self.target_cutoff_ms() * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ListenerProfile::Ha => "ha",
            ListenerProfile::Ci => "ci",
        }
    }
}

impl std::str::FromStr for ListenerProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ha" => Ok(ListenerProfile::Ha),
            "ci" => Ok(ListenerProfile::Ci),
            other => Err(Error::config(format!("unknown listener profile `{other}`"))),
        }
    }
}

/// Where the WPE stage gets its anechoic PSD from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PsdMode {
    Oracle,
    #[default]
    Smoothed,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Filter taps K, in frames.
    pub taps: usize,
    /// Microphone channels D.
    pub channels: usize,
    /// Forgetting factor.
    pub alpha: f64,
    /// Additive floor on the gain denominator.
    pub epsilon: f64,
    /// Moderate-range length L_m, in frames.
    pub moderate_frames: usize,
    pub profile: ListenerProfile,
    /// Overrides the profile's prediction delay when set.
    pub delay_override: Option<usize>,
    pub psd_mode: PsdMode,
    pub postfilter_enabled: bool,
    /// Recursive periodogram smoothing constant for [`PsdMode::Smoothed`].
    pub smoothing_beta: f64,
    /// Optional lower bound on the Wiener gain; 0 disables it.
    pub min_gain: f64,
    /// Spread per-bin work over the rayon pool (ignored without the
    /// `parallel` feature).
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            channels: 2,
            alpha: 0.99,
            epsilon: 1e-3,
            moderate_frames: 10,
            profile: ListenerProfile::Ha,
            delay_override: None,
            psd_mode: PsdMode::Smoothed,
            postfilter_enabled: false,
            smoothing_beta: 0.85,
            min_gain: 0.0,
            parallel: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.taps == 0 {
            return Err(Error::config("taps must be at least 1"));
        }
        if self.moderate_frames == 0 {
            return Err(Error::config("moderate_frames must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing_beta) {
            return Err(Error::config("smoothing_beta must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.min_gain) {
            return Err(Error::config("min_gain must lie in [0, 1]"));
        }
        if self.delay_override == Some(0) {
            return Err(Error::config("prediction delay must be at least one frame"));
        }
        Ok(())
    }

    /// Prediction delay in frames.
    pub fn delay(&self) -> usize {
        self.delay_override.unwrap_or_else(|| self.profile.delta_frames())
    }
}

/// Discrete convolution of every `h` channel with mono `x`, truncated to
/// `x.len()`.
pub fn convolve(rir: &RoomImpulseResponse, dry: &AudioBuffer) -> Result<AudioBuffer> {
    if dry.num_channels() != 1 {
        return Err(Error::shape(format!(
            "dry signal must be mono, got {} channels",
            dry.num_channels()
        )));
    }
    if dry.is_empty() {
        return Err(Error::Empty("dry signal".into()));
    }
    let x = dry.channel(0);
    let out = rir.taps().iter().map(|h| convolve_truncated(h, x)).collect();
    AudioBuffer::from_channels(out)
}

/// `y[n] = sum_k h[k] x[n-k]` for `n < x.len()`.
pub fn convolve_truncated(h: &[f64], x: &[f64]) -> Vec<f64> {
    let n_out = x.len();
    // Skip the leading and trailing zeros of the kernel, they are common in RIRs.
    let first = h.iter().position(|&v| v != 0.0);
    let Some(first) = first else { return vec![0.0; n_out] };
    let last = h.iter().rposition(|&v| v != 0.0).unwrap_or(first);
    let kernel = &h[first..=last];
    let mut y = vec![0.0; n_out];
    if first >= n_out {
        return y;
    }
    let body = if kernel.len() * x.len() <= 1 << 16 || kernel.len() <= 32 {
        direct_convolution(kernel, x, n_out - first)
    } else {
        fft_convolution(kernel, x, n_out - first)
    };
    y[first..].copy_from_slice(&body);
    y
}

fn direct_convolution(h: &[f64], x: &[f64], n_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; n_out];
    for (n, yn) in y.iter_mut().enumerate() {
        let kmax = n.min(h.len() - 1);
        let mut acc = 0.0;
        for k in 0..=kmax {
            if n - k < x.len() {
                acc += h[k] * x[n - k];
            }
        }
        *yn = acc;
    }
    y
}

fn fft_convolution(h: &[f64], x: &[f64], n_out: usize) -> Vec<f64> {
    let n = (h.len() + x.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    let mut b: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().take(n_out).map(|z| z.re * scale).collect()
}

/// Reverberant target for a listener: the dry signal convolved with the RIR
/// truncated to `[delay, delay + cutoff)`.
pub fn make_target(
    rir: &RoomImpulseResponse,
    dry: &AudioBuffer,
    profile: ListenerProfile,
) -> Result<AudioBuffer> {
    let start = rir.propagation_delay;
    let end = start + profile.cutoff_samples();
    if end > rir.len() {
        log::warn!(
            "target cutoff ({} samples) exceeds RIR length {}; truncating",
            end,
            rir.len()
        );
    }
    convolve(&rir.windowed(start..end.min(rir.len())), dry)
}

/// Tap-disjoint decomposition of an RIR around the prediction delay.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSplit {
    /// Everything up to `delay + delta` frames (includes any pre-delay taps).
    pub target: RoomImpulseResponse,
    /// `[delta, delta + L_m)` frames after the direct path.
    pub moderate: RoomImpulseResponse,
    /// Everything from `delta + L_m` frames on.
    pub final_part: RoomImpulseResponse,
    /// Sample boundaries `(moderate start, final start)`, clipped to the RIR.
    pub boundaries: (usize, usize),
}

pub fn split_rir(rir: &RoomImpulseResponse, delta_frames: usize, moderate_frames: usize) -> RirSplit {
    let n = rir.len();
    let b1 = (rir.propagation_delay + delta_frames * HOP_SAMPLES).min(n);
    let b2 = (b1 + moderate_frames * HOP_SAMPLES).min(n);
    RirSplit {
        target: rir.windowed(0..b1),
        moderate: rir.windowed(b1..b2),
        final_part: rir.windowed(b2..n),
        boundaries: (b1, b2),
    }
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

    fn brute_force(h: &[f64], x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|n| {
                let mut acc = 0.0;
                for (k, hk) in h.iter().enumerate() {
                    if k <= n {
                        acc += hk * x[n - k];
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn identity_kernel_replicates_dry() {
        let dry = AudioBuffer::mono(noise(300, 1)).unwrap();
        let rir = RoomImpulseResponse::impulse(2, 64, 0).unwrap();
        let y = convolve(&rir, &dry).unwrap();
        assert_eq!(y.num_channels(), 2);
        assert_eq!(y.channel(0), dry.channel(0));
        assert_eq!(y.channel(1), dry.channel(0));
    }

    #[test]
    fn delayed_impulse_delays() {
        let x = noise(500, 2);
        let dry = AudioBuffer::mono(x.clone()).unwrap();
        let rir = RoomImpulseResponse::impulse(1, 200, 100).unwrap();
        let y = convolve(&rir, &dry).unwrap();
        assert!(y.channel(0)[..100].iter().all(|&v| v == 0.0));
        assert_eq!(&y.channel(0)[100..], &x[..400]);
    }

    #[test]
    fn three_tap_matches_brute_force() {
        let h = vec![0.3, -0.7, 0.25];
        let x = noise(16, 3);
        let rir = RoomImpulseResponse::from_taps(vec![h.clone()], 0).unwrap();
        let y = convolve(&rir, &AudioBuffer::mono(x.clone()).unwrap()).unwrap();
        for (a, b) in y.channel(0).iter().zip(brute_force(&h, &x)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fft_path_matches_brute_force() {
        let h = noise(700, 4);
        let x = noise(3000, 5);
        let fast = convolve_truncated(&h, &x);
        let slow = brute_force(&h, &x);
        let err: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "max error {err}");
    }

    #[test]
    fn convolve_rejects_bad_inputs() {
        let rir = RoomImpulseResponse::impulse(2, 8, 0).unwrap();
        let stereo = AudioBuffer::zeros(2, 10);
        assert!(matches!(convolve(&rir, &stereo), Err(Error::Shape(_))));
        let empty = AudioBuffer::zeros(1, 0);
        assert!(matches!(convolve(&rir, &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn ci_target_keeps_short_rir_whole() {
        // All energy inside the first 16 ms.
        let mut h = vec![0.0; 400];
        h[10] = 1.0;
        h[60] = 0.4;
        h[200] = -0.2;
        let rir = RoomImpulseResponse::from_taps(vec![h], 10).unwrap();
        let dry = AudioBuffer::mono(noise(2000, 6)).unwrap();
        let target = make_target(&rir, &dry, ListenerProfile::Ci).unwrap();
        assert_eq!(target, convolve(&rir, &dry).unwrap());
    }

    #[test]
    fn ha_target_of_late_only_rir_is_scaled_dry() {
        let mut h = vec![0.0; 2000];
        h[20] = 0.8;
        for (i, v) in h.iter_mut().enumerate().skip(20 + 640 + 1) {
            *v = 0.01 * ((i as f64) * 0.37).sin();
        }
        let rir = RoomImpulseResponse::from_taps(vec![h], 20).unwrap();
        let x = noise(3000, 7);
        let target = make_target(&rir, &AudioBuffer::mono(x.clone()).unwrap(), ListenerProfile::Ha)
            .unwrap();
        for n in 0..x.len() {
            let expect = if n >= 20 { 0.8 * x[n - 20] } else { 0.0 };
            assert!((target.channel(0)[n] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn target_energy_follows_tap_partition() {
        // Sparse taps, white unit-variance-like excitation replaced by a
        // delta train spaced beyond the RIR so that cross terms vanish.
        let mut h = vec![0.0; 1200];
        h[5] = 1.0;
        h[300] = 0.5;
        h[700] = -0.3;
        h[1100] = 0.2;
        let rir = RoomImpulseResponse::from_taps(vec![h.clone()], 5).unwrap();
        let mut x = vec![0.0; 12_000];
        for k in 0..8 {
            x[k * 1400] = 1.0 + k as f64 * 0.1;
        }
        let dry = AudioBuffer::mono(x.clone()).unwrap();
        let input_energy: f64 = x.iter().map(|v| v * v).sum();
        for profile in [ListenerProfile::Ha, ListenerProfile::Ci] {
            let t = make_target(&rir, &dry, profile).unwrap();
            let cutoff = 5 + profile.cutoff_samples();
            let taps: f64 = h[5..cutoff].iter().map(|v| v * v).sum();
            assert!((t.energy() - taps * input_energy).abs() < 1e-9);
        }
    }

    #[test]
    fn split_is_exact_partition() {
        let h: Vec<f64> = noise(4000, 8);
        let rir = RoomImpulseResponse::from_taps(vec![h.clone(), noise(4000, 9)], 37).unwrap();
        let s = split_rir(&rir, 5, 10);
        for d in 0..2 {
            for i in 0..rir.len() {
                let sum = s.target.channel(d)[i] + s.moderate.channel(d)[i] + s.final_part.channel(d)[i];
                assert_eq!(sum, rir.channel(d)[i]);
            }
        }
        let late = rir.energy_in(s.boundaries.0..rir.len());
        let parts = s.moderate.energy() + s.final_part.energy();
        assert!((late - parts).abs() <= 1e-12 * late);
    }

    #[test]
    fn moderate_range_spans_40_to_120_ms() {
        let rir = RoomImpulseResponse::impulse(1, 4000, 100).unwrap();
        let s = split_rir(&rir, 5, 10);
        let ms = |n: usize| (n - 100) as f64 * 1000.0 / SAMPLE_RATE as f64;
        assert_eq!(ms(s.boundaries.0), 40.0);
        assert_eq!(ms(s.boundaries.1), 120.0);
    }

    #[test]
    fn degenerate_split_boundaries_yield_empty_parts() {
        let rir = RoomImpulseResponse::impulse(1, 300, 10).unwrap();
        let s = split_rir(&rir, 5, 10);
        assert_eq!(s.final_part.energy(), 0.0);
        assert_eq!(s.moderate.energy(), 0.0);
        assert_eq!(s.target, rir.windowed(0..300));
    }

    #[test]
    fn profiles_are_consistent_with_hop() {
        for p in [ListenerProfile::Ha, ListenerProfile::Ci] {
            assert_eq!(p.delta_frames() * HOP_SAMPLES, p.cutoff_samples());
        }
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        for bad in [
            PipelineConfig { alpha: 1.0, ..Default::default() },
            PipelineConfig { alpha: 0.0, ..Default::default() },
            PipelineConfig { epsilon: 0.0, ..Default::default() },
            PipelineConfig { taps: 0, ..Default::default() },
            PipelineConfig { moderate_frames: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn schroeder_on_ideal_exponential() {
        let t60 = 0.5;
        let n = (1.2 * t60 * SAMPLE_RATE as f64) as usize;
        let energy: Vec<f64> = (0..n)
            .map(|i| (-13.815510557964274 * i as f64 / SAMPLE_RATE as f64 / t60).exp())
            .collect();
        let d = decay_times(&energy, 0).unwrap();
        assert!((d.t60 - t60).abs() < 0.01 * t60, "{d:?}");
        assert!((d.t30 - t60 / 2.0).abs() < 0.01 * t60, "{d:?}");
    }
}
