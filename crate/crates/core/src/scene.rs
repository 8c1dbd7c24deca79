//! Seeded synthetic scenes: stochastic two-channel room responses,
//! speech-like dry sources, long sequences cut into segments, sensor noise.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{convolve, make_target, AudioBuffer, ListenerProfile, RoomImpulseResponse, SAMPLE_RATE};

const FS: f64 = SAMPLE_RATE as f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RirSpec {
    /// Reverberation time in seconds, within [0.4, 1.0].
    pub t60: f64,
    pub propagation_delay_ms: f64,
    /// Sparse reflections between 2 and 50 ms after the direct path.
    pub n_early_reflections: usize,
    /// Extra delay of channel 1 relative to channel 0, at most 8.
    pub inter_channel_delay_samples: usize,
    /// Direct path energy over diffuse tail energy, in dB.
    pub tail_drr_db: f64,
    pub seed: u64,
}

impl Default for RirSpec {
    fn default() -> Self {
        Self {
            t60: 0.6,
            propagation_delay_ms: 5.0,
            n_early_reflections: 5,
            inter_channel_delay_samples: 3,
            tail_drr_db: -6.0,
            seed: 0,
        }
    }
}

impl RirSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.4..=1.0).contains(&self.t60) {
            return Err(Error::config(format!("t60 {} outside [0.4, 1.0] s", self.t60)));
        }
        if !(self.propagation_delay_ms >= 0.0 && self.propagation_delay_ms.is_finite()) {
            return Err(Error::config("propagation delay must be nonnegative"));
        }
        if self.n_early_reflections > 8 {
            return Err(Error::config("at most 8 early reflections"));
        }
        if self.inter_channel_delay_samples > 8 {
            return Err(Error::config("inter-channel delay is at most 8 samples"));
        }
        if !self.tail_drr_db.is_finite() {
            return Err(Error::config("tail DRR must be finite"));
        }
        Ok(())
    }

    pub fn propagation_delay_samples(&self) -> usize {
        (self.propagation_delay_ms * 1e-3 * FS).round() as usize
    }
}

/// Unit direct path, sparse 1/delay reflections and an exponentially
/// decaying Gaussian tail, per channel.
pub fn generate_rir(spec: &RirSpec) -> Result<RoomImpulseResponse> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let delay = spec.propagation_delay_samples();
    let offset = spec.inter_channel_delay_samples;
    let body = (1.2 * spec.t60 * FS).ceil() as usize;
    let len = delay + offset + body;

    // Reflection delays are shared; signs and a mild level jitter differ per ear.
    let (lo, hi) = ((2e-3f64).ln(), (50e-3f64).ln());
    let reflections: Vec<f64> = (0..spec.n_early_reflections)
        .map(|_| {
            let u: f64 = rng.random();
            (hi - u * (hi - lo)).exp()
        })
        .collect();

    let decay = 6.9 / (spec.t60 * FS);
    let tail_energy = 10f64.powf(-spec.tail_drr_db / 10.0);
    let mut taps = Vec::with_capacity(2);
    for ch in 0..2 {
        let start = delay + ch * offset;
        let mut h = vec![0.0; len];
        let mut tail: Vec<f64> = (1..body)
            .map(|n| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * (-decay * n as f64).exp()
            })
            .collect();
        let e: f64 = tail.iter().map(|x| x * x).sum();
        let scale = (tail_energy / e).sqrt();
        tail.iter_mut().for_each(|x| *x *= scale);
        h[start + 1..start + body].copy_from_slice(&tail);
        h[start] += 1.0;
        for &r in &reflections {
            let lag = (r * FS).round() as usize;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let jitter: f64 = rng.random_range(0.8..1.2);
            h[start + lag] += sign * jitter * 2e-3 / r;
        }
        taps.push(h);
    }
    RoomImpulseResponse::from_taps(taps, delay)
}

/// Speech-like noise: AR(2) resonance at a random formant, full-depth
/// sinusoidal intensity modulation at a syllable rate of 3 to 5 Hz, and a
/// faint white floor so every frequency is excited. Normalized to an RMS
/// of 0.1.
pub fn speech_like(seconds: f64, seed: u64) -> Result<AudioBuffer> {
    let n = (seconds * FS).round() as usize;
    if n == 0 {
        return Err(Error::Empty("zero-length utterance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let formant: f64 = rng.random_range(300.0..1200.0);
    let radius = 0.92;
    let theta = 2.0 * std::f64::consts::PI * formant / FS;
    let (a1, a2) = (2.0 * radius * theta.cos(), -radius * radius);
    let rate: f64 = rng.random_range(3.0..5.0);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let (mut y1, mut y2) = (0.0, 0.0);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = a1 * y1 + a2 * y2 + e;
            y2 = y1;
            y1 = y;
            let t = i as f64 / FS;
            let intensity = 0.5 * (1.0 + (std::f64::consts::TAU * rate * t + phase).cos());
            let w: f64 = StandardNormal.sample(&mut rng);
            intensity.sqrt() * y + 0.02 * w
        })
        .collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= 0.1 / rms);
    AudioBuffer::mono(x)
}

/// Gaussian white noise at an RMS of 0.1.
pub fn white_noise(seconds: f64, seed: u64) -> Result<AudioBuffer> {
    let n = (seconds * FS).round() as usize;
    if n == 0 {
        return Err(Error::Empty("zero-length utterance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::mono((0..n).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSpec {
    pub total_seconds: f64,
    pub segment_seconds: f64,
    /// Whether segment 0 only warms up the filters and is left out of metrics.
    pub first_segment_is_init: bool,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self { total_seconds: 20.0, segment_seconds: 4.0, first_segment_is_init: true }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_seconds > 0.0) || !(self.total_seconds >= 2.0 * self.segment_seconds) {
            return Err(Error::config(format!(
                "sequence of {} s needs at least two {} s segments",
                self.total_seconds, self.segment_seconds
            )));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        (self.total_seconds * FS).round() as usize
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * FS).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub audio: AudioBuffer,
    /// Sample ranges of consecutive segments; the last may be shorter.
    pub segments: Vec<Range<usize>>,
    pub first_segment_is_init: bool,
}

impl Sequence {
    /// Samples that count for evaluation.
    pub fn evaluated(&self) -> Range<usize> {
        let start = if self.first_segment_is_init { self.segments[0].end } else { 0 };
        start..self.audio.len()
    }
}

/// Concatenates the utterances in a seeded order, looping them when they
/// fall short, and trims to the requested length.
pub fn build_sequence(utterances: &[AudioBuffer], spec: &SequenceSpec, seed: u64) -> Result<Sequence> {
    spec.validate()?;
    if utterances.is_empty() {
        return Err(Error::Empty("no utterances to build a sequence from".into()));
    }
    if let Some(u) = utterances.iter().find(|u| u.num_channels() != 1) {
        return Err(Error::shape(format!("utterances must be mono, got {} channels", u.num_channels())));
    }
    if utterances.iter().all(|u| u.is_empty()) {
        return Err(Error::Empty("all utterances are empty".into()));
    }
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = spec.total_samples();
    let mut samples = Vec::with_capacity(total);
    'fill: loop {
        for &i in &order {
            for &x in utterances[i].channel(0) {
                if samples.len() == total {
                    break 'fill;
                }
                samples.push(x);
            }
        }
    }
    let seg = spec.segment_samples();
    let segments = (0..total).step_by(seg).map(|s| s..(s + seg).min(total)).collect();
    Ok(Sequence { audio: AudioBuffer::mono(samples)?, segments, first_segment_is_init: spec.first_segment_is_init })
}

/// Adds independent white Gaussian noise to every channel at an SNR drawn
/// uniformly from `snr_db_range`, scaled so the realized SNR is exact.
/// Returns the noisy audio and the SNR used.
pub fn add_sensor_noise(audio: &AudioBuffer, snr_db_range: [f64; 2], seed: u64) -> Result<(AudioBuffer, f64)> {
    let [lo, hi] = snr_db_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::config(format!("invalid SNR range [{lo}, {hi}]")));
    }
    let signal = audio.energy();
    if signal == 0.0 {
        return Err(Error::ZeroEnergy("cannot set an SNR on silent input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snr = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let noise: Vec<Vec<f64>> = (0..audio.num_channels())
        .map(|_| (0..audio.len()).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let noise = AudioBuffer::from_channels(noise)?;
    let gain = (signal / 10f64.powf(snr / 10.0) / noise.energy()).sqrt();
    Ok((audio.add(&noise.scaled(gain))?, snr))
}

/// Where the dry signal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrySource {
    /// Built-in generator, one utterance per seed.
    SpeechLike { utterances: usize, utterance_seconds: f64, seed: u64 },
    /// Uniform white noise, one utterance per seed; the analytic tap-energy
    /// ratios hold exactly only for this excitation.
    White { utterances: usize, utterance_seconds: f64, seed: u64 },
    /// Mono 16 kHz WAV files.
    Files { paths: Vec<String> },
}

impl Default for DrySource {
    fn default() -> Self {
        DrySource::SpeechLike { utterances: 4, utterance_seconds: 6.0, seed: 0 }
    }
}

/// Everything needed to regenerate a scene bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub rir: RirSpec,
    pub sequence: SequenceSpec,
    pub dry: DrySource,
    pub sequence_seed: u64,
    /// Sensor noise SNR range in dB; `None` leaves the scene noise free.
    pub snr_db: Option<[f64; 2]>,
    pub noise_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rir: RirSpec::default(),
            sequence: SequenceSpec::default(),
            dry: DrySource::default(),
            sequence_seed: 0,
            snr_db: Some([15.0, 25.0]),
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub dry: Sequence,
    pub rir: RoomImpulseResponse,
    /// Reverberant microphone signals including sensor noise.
    pub reverberant: AudioBuffer,
    pub snr_db: Option<f64>,
    pub target_ha: AudioBuffer,
    pub target_ci: AudioBuffer,
}

impl Scene {
    pub fn target(&self, profile: ListenerProfile) -> &AudioBuffer {
        match profile {
            ListenerProfile::Ha => &self.target_ha,
            ListenerProfile::Ci => &self.target_ci,
        }
    }
}

/// Builds a scene; `load` resolves file-based dry sources.
pub fn build_scene(
    spec: &SceneSpec,
    load: impl Fn(&str) -> Result<AudioBuffer>,
) -> Result<Scene> {
    let utterances = match &spec.dry {
        DrySource::SpeechLike { utterances, utterance_seconds, seed } => (0..*utterances as u64)
            .map(|i| speech_like(*utterance_seconds, seed.wrapping_mul(1000).wrapping_add(i)))
            .collect::<Result<Vec<_>>>()?,
        DrySource::White { utterances, utterance_seconds, seed } => (0..*utterances as u64)
            .map(|i| white_noise(*utterance_seconds, seed.wrapping_mul(1000).wrapping_add(i)))
            .collect::<Result<Vec<_>>>()?,
        DrySource::Files { paths } => paths.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?,
    };
    let dry = build_sequence(&utterances, &spec.sequence, spec.sequence_seed)?;
    let rir = generate_rir(&spec.rir)?;
    let clean = convolve(&rir, &dry.audio)?;
    let (reverberant, snr_db) = match spec.snr_db {
        Some(range) => {
            let (noisy, snr) = add_sensor_noise(&clean, range, spec.noise_seed)?;
            (noisy, Some(snr))
        }
        None => (clean, None),
    };
    let target_ha = make_target(&rir, &dry.audio, ListenerProfile::Ha)?;
    let target_ci = make_target(&rir, &dry.audio, ListenerProfile::Ci)?;
    Ok(Scene { spec: spec.clone(), dry, rir, reverberant, snr_db, target_ha, target_ci })
}
