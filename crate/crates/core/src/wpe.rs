//! Frame-online RLS weighted-prediction-error filter.
//!
//! Per frequency bin `f`, with `X` the stacked delayed frames
//! `[x_{t-Δ}; x_{t-Δ-1}; ...; x_{t-Δ-K+1}]` (length `D*K`, channel index
//! fastest) and `u = R⁻¹ X`:
//!
//! ```text
//! k   = (1-α) u / (α λ_t + (1-α) Xᴴ u + ε)
//! v   = x_t - Gᴴ X                      (a-priori prediction error, the output)
//! R⁻¹ = (R⁻¹ - k uᴴ) / α
//! G   = G + k vᴴ
//! ```
//!
//! With `ε = 0` this is the exact recursive solution of the exponentially
//! weighted least-squares problem with weights `(1-α) α^{T-t} / λ_t` and the
//! prior `α^T I` contributed by the `R⁻¹ = I` initialisation.

use std::collections::VecDeque;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::parallel::for_each_indexed;
use crate::psd::{PsdFrame, PsdSource};
use crate::signal::{Frame, PipelineConfig, Spectrogram};

/// PSD values are clamped from below to keep silent frames finite.
pub const PSD_FLOOR: f64 = 1e-12;

const SNAPSHOT_MAGIC: &[u8; 4] = b"WPES";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeParams {
    pub channels: usize,
    pub taps: usize,
    pub delay: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub bins: usize,
}

impl WpeParams {
    pub fn from_config(config: &PipelineConfig, bins: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            channels: config.channels,
            taps: config.taps,
            delay: config.delay(),
            alpha: config.alpha,
            epsilon: config.epsilon,
            bins,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.taps == 0 || self.delay == 0 || self.bins == 0 {
            return Err(Error::config(format!("degenerate WPE dimensions {self:?}")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Stacked regressor length `D*K`.
    pub fn order(&self) -> usize {
        self.channels * self.taps
    }

    fn history_len(&self) -> usize {
        self.delay + self.taps - 1
    }
}

/// Filter memory of one frequency bin, plus scratch for the update.
#[derive(Debug, Clone, PartialEq)]
struct BinState {
    /// `DK x D`, row-major.
    g: Vec<Complex64>,
    /// `DK x DK`, row-major, Hermitian.
    rinv: Vec<Complex64>,
    x: Vec<Complex64>,
    u: Vec<Complex64>,
    k: Vec<Complex64>,
    out: Vec<Complex64>,
}

impl BinState {
    fn new(order: usize, channels: usize) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let mut rinv = vec![zero; order * order];
        for i in 0..order {
            rinv[i * order + i] = Complex64::new(1.0, 0.0);
        }
        Self {
            g: vec![zero; order * channels],
            rinv,
            x: vec![zero; order],
            u: vec![zero; order],
            k: vec![zero; order],
            out: vec![zero; channels],
        }
    }

    fn update(&mut self, current: &[Complex64], lambda: f64, alpha: f64, epsilon: f64) {
        let n = self.x.len();
        let d_count = current.len();

        for i in 0..n {
            let row = &self.rinv[i * n..(i + 1) * n];
            self.u[i] = row.iter().zip(&self.x).map(|(r, x)| r * x).sum();
        }
        let quad: f64 = self.x.iter().zip(&self.u).map(|(x, u)| (x.conj() * u).re).sum();
        let denom = alpha * lambda + (1.0 - alpha) * quad + epsilon;
        let scale = (1.0 - alpha) / denom;
        for (k, u) in self.k.iter_mut().zip(&self.u) {
            *k = u * scale;
        }

        for (d, (out, &cur)) in self.out.iter_mut().zip(current).enumerate() {
            let pred: Complex64 = (0..n).map(|i| self.g[i * d_count + d].conj() * self.x[i]).sum();
            *out = cur - pred;
        }

        // k uᴴ = scale · u uᴴ is Hermitian, so only the upper triangle is
        // computed and mirrored; R⁻¹ stays exactly Hermitian.
        let inv_alpha = 1.0 / alpha;
        for i in 0..n {
            let ki = self.k[i];
            let diag = &mut self.rinv[i * n + i];
            *diag = Complex64::new((diag.re - (ki * self.u[i].conj()).re) * inv_alpha, 0.0);
            for j in i + 1..n {
                let r = (self.rinv[i * n + j] - ki * self.u[j].conj()) * inv_alpha;
                self.rinv[i * n + j] = r;
                self.rinv[j * n + i] = r.conj();
            }
        }

        for i in 0..n {
            for d in 0..d_count {
                self.g[i * d_count + d] += self.k[i] * self.out[d].conj();
            }
        }
    }

    /// Largest `|R⁻¹ - R⁻ᴴ|` entry relative to the largest entry.
    fn asymmetry(&self) -> f64 {
        let n = self.x.len();
        let (mut dev, mut scale) = (0.0f64, 0.0f64);
        for i in 0..n {
            for j in 0..n {
                let a = self.rinv[i * n + j];
                dev = dev.max((a - self.rinv[j * n + i].conj()).norm());
                scale = scale.max(a.norm());
            }
        }
        if scale > 0.0 {
            dev / scale
        } else {
            0.0
        }
    }
}

/// Complete adaptive-filter memory: per-bin `G` and `R⁻¹` and the delayed
/// frame buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WpeState {
    params: WpeParams,
    bins: Vec<BinState>,
    /// Most recent first; at most `Δ + K - 1` frames.
    history: VecDeque<Frame>,
    frame_index: u64,
    parallel: bool,
}

impl WpeState {
    /// `R⁻¹ = I`, `G = 0`, empty buffer.
    pub fn new(params: WpeParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            bins: (0..params.bins).map(|_| BinState::new(params.order(), params.channels)).collect(),
            history: VecDeque::with_capacity(params.history_len()),
            frame_index: 0,
            parallel: true,
            params,
        })
    }

    pub fn from_config(config: &PipelineConfig, bins: usize) -> Result<Self> {
        let mut state = Self::new(WpeParams::from_config(config, bins)?)?;
        state.parallel = config.parallel;
        Ok(state)
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn params(&self) -> &WpeParams {
        &self.params
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// Filter of bin `f`, `DK x D` row-major.
    pub fn filter(&self, f: usize) -> &[Complex64] {
        &self.bins[f].g
    }

    /// Inverse weighted covariance of bin `f`, `DK x DK` row-major.
    pub fn inverse_covariance(&self, f: usize) -> &[Complex64] {
        &self.bins[f].rinv
    }

    /// Gain vector computed in the most recent step for bin `f`.
    pub fn last_gain(&self, f: usize) -> &[Complex64] {
        &self.bins[f].k
    }

    /// Largest relative deviation of `R⁻¹` from Hermitian symmetry over all bins.
    pub fn hermitian_deviation(&self) -> f64 {
        self.bins.iter().map(BinState::asymmetry).fold(0.0, f64::max)
    }

    /// Processes one frame. On error the state is left untouched.
    pub fn step(&mut self, x: &Frame, lambda: &PsdFrame) -> Result<Frame> {
        let p = self.params;
        if x.num_channels() != p.channels || x.num_bins() != p.bins {
            return Err(Error::shape(format!(
                "WPE state is {}x{}, frame is {}x{}",
                p.channels,
                p.bins,
                x.num_channels(),
                x.num_bins()
            )));
        }
        if lambda.len() != p.bins {
            return Err(Error::shape(format!("PSD has {} bins, expected {}", lambda.len(), p.bins)));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("WPE input frame".into()));
        }
        for (bin, &v) in lambda.values().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("PSD bin {bin}")));
            }
            if v < 0.0 {
                return Err(Error::NegativePsd { channel: 0, bin, value: v });
            }
        }

        let history = &self.history;
        let lambdas = lambda.values();
        for_each_indexed(&mut self.bins, self.parallel, |f, bin| {
            for k in 0..p.taps {
                let back = p.delay + k;
                let past = history.get(back - 1);
                for d in 0..p.channels {
                    bin.x[k * p.channels + d] =
                        past.map_or(Complex64::new(0.0, 0.0), |fr| fr.get(d, f));
                }
            }
            let current: Vec<Complex64> = (0..p.channels).map(|d| x.get(d, f)).collect();
            bin.update(&current, lambdas[f].max(PSD_FLOOR), p.alpha, p.epsilon);
        });

        let mut out = Frame::zeros(p.channels, p.bins);
        for (f, bin) in self.bins.iter().enumerate() {
            for d in 0..p.channels {
                out.set(d, f, bin.out[d]);
            }
        }
        self.history.push_front(x.clone());
        self.history.truncate(p.history_len());
        self.frame_index += 1;
        Ok(out)
    }

    /// Runs [`Self::step`] over every frame of `spec`, pulling one PSD
    /// frame per step from `psd`. The state continues from where it was.
    pub fn process_sequence(&mut self, spec: &Spectrogram, psd: &mut dyn PsdSource) -> Result<Spectrogram> {
        let mut out = Spectrogram::zeros(spec.num_channels(), spec.num_frames(), spec.num_bins(), spec.num_samples());
        for t in 0..spec.num_frames() {
            let x = spec.frame(t);
            let lambda = psd.estimate(&x)?;
            let v = self.step(&x, &lambda)?;
            out.set_frame(t, &v)?;
        }
        Ok(out)
    }

    /// Versioned little-endian dump of `G`, `R⁻¹` and the frame buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut b = Vec::new();
        b.extend_from_slice(SNAPSHOT_MAGIC);
        b.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        for v in [p.channels, p.taps, p.delay, p.bins] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&p.alpha.to_le_bytes());
        b.extend_from_slice(&p.epsilon.to_le_bytes());
        b.extend_from_slice(&self.frame_index.to_le_bytes());
        let put = |b: &mut Vec<u8>, z: &Complex64| {
            b.extend_from_slice(&z.re.to_le_bytes());
            b.extend_from_slice(&z.im.to_le_bytes());
        };
        for bin in &self.bins {
            bin.g.iter().for_each(|z| put(&mut b, z));
            bin.rinv.iter().for_each(|z| put(&mut b, z));
        }
        b.extend_from_slice(&(self.history.len() as u32).to_le_bytes());
        for fr in &self.history {
            fr.as_slice().iter().for_each(|z| put(&mut b, z));
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let channels = r.u32()? as usize;
        let taps = r.u32()? as usize;
        let delay = r.u32()? as usize;
        let bins = r.u32()? as usize;
        let alpha = r.f64()?;
        let epsilon = r.f64()?;
        let frame_index = r.u64()?;
        let params = WpeParams { channels, taps, delay, alpha, epsilon, bins };
        let mut state = WpeState::new(params).map_err(|e| Error::Snapshot(e.to_string()))?;
        state.frame_index = frame_index;
        for bin in &mut state.bins {
            for z in bin.g.iter_mut().chain(bin.rinv.iter_mut()) {
                *z = r.complex()?;
            }
        }
        let frames = r.u32()? as usize;
        if frames > params.history_len() {
            return Err(Error::Snapshot(format!("buffer holds {frames} frames, max {}", params.history_len())));
        }
        for _ in 0..frames {
            let data = (0..channels * bins).map(|_| r.complex()).collect::<Result<Vec<_>>>()?;
            state.history.push_back(Frame::from_vec(channels, bins, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Snapshot("trailing bytes".into()));
        }
        Ok(state)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Snapshot("unexpected end of data".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}
