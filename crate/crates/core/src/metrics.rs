//! Evaluation: per-bin regression of a time-frequency RIR from dry to
//! processed spectrograms, early/moderate/final energy ratios, SNR and SDR.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_range;
use crate::signal::{AudioBuffer, RoomImpulseResponse, Spectrogram, HOP_SAMPLES, SAMPLE_RATE};

/// Symmetric cap on every reported log-ratio.
pub const DB_CAP: f64 = 80.0;
/// Relative ridge added to the regression Gramian diagonal.
pub const RIDGE: f64 = 1e-8;

/// `10 log10(num / den)` clamped to `±DB_CAP`; a zero denominator gives the cap.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// How the regression is set up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegressionSpec {
    /// Number of taps `P`.
    pub order: usize,
    /// Propagation delay in frames.
    pub delta_star: usize,
    /// Taps `[0, delta_tilde)` count as target.
    pub delta_tilde: usize,
    /// Taps `[delta_tilde, delta_tilde + moderate)` are moderate reverberation.
    pub moderate: usize,
    /// Frames entering the least-squares sum; `None` uses all of them.
    pub frames: Option<Range<usize>>,
}

impl RegressionSpec {
    /// Order long enough to span `t30` seconds and the full partition.
    pub fn order_for_t30(t30: f64, delta_tilde: usize, moderate: usize) -> usize {
        let frames = (t30 * SAMPLE_RATE as f64 / HOP_SAMPLES as f64).ceil() as usize;
        frames.max(delta_tilde + moderate + 1)
    }
}

/// Regressed RIR `Ĥ[d, τ, f]` plus the tap partition it is evaluated with.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedRir {
    h: Vec<Complex64>,
    channels: usize,
    order: usize,
    bins: usize,
    pub delta_star: usize,
    pub delta_tilde: usize,
    pub moderate: usize,
}

impl EstimatedRir {
    /// Wraps explicit coefficients laid out channel, tap, bin.
    pub fn from_coefficients(
        h: Vec<Complex64>,
        channels: usize,
        order: usize,
        bins: usize,
        delta_star: usize,
        delta_tilde: usize,
        moderate: usize,
    ) -> Result<Self> {
        if h.len() != channels * order * bins {
            return Err(Error::shape(format!(
                "{} coefficients for {channels}x{order}x{bins}",
                h.len()
            )));
        }
        if order < delta_tilde + moderate {
            return Err(Error::config(format!(
                "order {order} shorter than target plus moderate taps {}",
                delta_tilde + moderate
            )));
        }
        if h.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("regression coefficients".into()));
        }
        Ok(Self { h, channels, order, bins, delta_star, delta_tilde, moderate })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn get(&self, d: usize, tap: usize, f: usize) -> Complex64 {
        self.h[(d * self.order + tap) * self.bins + f]
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.h
    }

    /// Tap ranges of the target, moderate and final components.
    pub fn partition(&self) -> [Range<usize>; 3] {
        let b1 = self.delta_tilde;
        let b2 = self.delta_tilde + self.moderate;
        [0..b1, b1..b2, b2..self.order]
    }

    /// `Σ_{τ∈taps} Ĥ_τ S_{t−τ−δ*}` for every channel, frame and bin.
    pub fn filter(&self, dry: &Spectrogram, taps: Range<usize>) -> Result<Spectrogram> {
        check_dry(dry, self.bins)?;
        let frames = dry.num_frames();
        let mut out = Spectrogram::zeros(self.channels, frames, self.bins, dry.num_samples());
        let taps = taps.start.min(self.order)..taps.end.min(self.order);
        for d in 0..self.channels {
            for t in 0..frames {
                for tau in taps.clone() {
                    let Some(src) = t.checked_sub(tau + self.delta_star) else { break };
                    let row = dry.row(0, src);
                    for (f, &r) in row.iter().enumerate().take(self.bins) {
                        let acc = out.get(d, t, f) + self.get(d, tau, f) * r;
                        out.set(d, t, f, acc);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_dry(dry: &Spectrogram, bins: usize) -> Result<()> {
    if dry.num_channels() != 1 {
        return Err(Error::shape(format!("dry spectrogram has {} channels, expected 1", dry.num_channels())));
    }
    if dry.num_bins() != bins {
        return Err(Error::shape(format!("dry has {} bins, expected {bins}", dry.num_bins())));
    }
    Ok(())
}

/// Least-squares fit of `proc[d,t,f] ≈ Σ_τ H[d,τ,f] dry[t−τ−δ*, f]` per bin.
///
/// The Gramian is shared by all channels of a bin and is built with a shift
/// recurrence along its diagonals.
pub fn estimate_rir(
    dry: &Spectrogram,
    proc: &Spectrogram,
    spec: &RegressionSpec,
    parallel: bool,
) -> Result<EstimatedRir> {
    let bins = proc.num_bins();
    check_dry(dry, bins)?;
    if dry.num_frames() != proc.num_frames() {
        return Err(Error::shape(format!(
            "dry has {} frames, processed {}",
            dry.num_frames(),
            proc.num_frames()
        )));
    }
    let total = proc.num_frames();
    let frames = spec.frames.clone().unwrap_or(0..total);
    if frames.end > total || frames.start >= frames.end {
        return Err(Error::config(format!("frame range {frames:?} outside 0..{total}")));
    }
    let p = spec.order;
    if p == 0 || frames.len() < 2 * p {
        return Err(Error::TooShort(format!(
            "{} frames for a {p}-tap regression (need {})",
            frames.len(),
            2 * p
        )));
    }
    if dry.energy() == 0.0 {
        return Err(Error::ZeroEnergy("dry spectrogram".into()));
    }
    let channels = proc.num_channels();
    let c = spec.delta_star as isize;
    let (t0, t1) = (frames.start as isize, frames.end as isize);

    let per_bin = map_range(bins, parallel, |f| -> Result<Vec<Complex64>> {
        let s: Vec<Complex64> = (0..total).map(|t| dry.get(0, t, f)).collect();
        let lag = |t: isize| {
            if t >= 0 && (t as usize) < total {
                s[t as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        };
        let term = |t: isize, i: usize, j: usize| lag(t - c - i as isize).conj() * lag(t - c - j as isize);

        let mut a = DMatrix::<Complex64>::zeros(p, p);
        for j in 0..p {
            a[(0, j)] = (t0..t1).map(|t| term(t, 0, j)).sum();
        }
        for i in 1..p {
            for j in i..p {
                a[(i, j)] = a[(i - 1, j - 1)] + term(t0 - 1, i - 1, j - 1) - term(t1 - 1, i - 1, j - 1);
            }
        }
        for i in 0..p {
            a[(i, i)].im = 0.0;
            for j in 0..i {
                a[(i, j)] = a[(j, i)].conj();
            }
        }
        let trace: f64 = (0..p).map(|i| a[(i, i)].re).sum();
        if !(trace > 0.0) {
            return Err(Error::RankDeficient { channel: 0, bin: f });
        }
        let gram = a.clone();
        let jitter = RIDGE * trace / p as f64;
        for i in 0..p {
            a[(i, i)].re += jitter;
        }
        let mut b = DMatrix::<Complex64>::zeros(p, channels);
        for d in 0..channels {
            for i in 0..p {
                b[(i, d)] = (t0..t1).map(|t| lag(t - c - i as isize).conj() * proc.get(d, t as usize, f)).sum();
            }
        }
        let chol = a.cholesky().ok_or(Error::RankDeficient { channel: 0, bin: f })?;
        // One iterated-Tikhonov step removes the ridge bias along
        // well-determined directions and leaves near-null ones damped.
        let x0 = chol.solve(&b);
        let x = &x0 + chol.solve(&(&b - &gram * &x0));
        if x.iter().any(|z| !z.is_finite()) {
            return Err(Error::RankDeficient { channel: 0, bin: f });
        }
        Ok(x.as_slice().to_vec())
    });

    let mut h = vec![Complex64::new(0.0, 0.0); channels * p * bins];
    for (f, solved) in per_bin.into_iter().enumerate() {
        // Column-major p x channels.
        let solved = solved?;
        for d in 0..channels {
            for tau in 0..p {
                h[(d * p + tau) * bins + f] = solved[d * p + tau];
            }
        }
    }
    EstimatedRir::from_coefficients(h, channels, p, bins, spec.delta_star, spec.delta_tilde, spec.moderate)
}

/// Energy of the regression residual relative to the processed energy,
/// over `frames`, in dB.
pub fn regression_error_db(
    rir: &EstimatedRir,
    dry: &Spectrogram,
    proc: &Spectrogram,
    frames: Range<usize>,
) -> Result<f64> {
    let fit = rir.filter(dry, 0..rir.order())?;
    let (mut err, mut total) = (0.0, 0.0);
    for d in 0..proc.num_channels() {
        for t in frames.clone() {
            for (y, yh) in proc.row(d, t).iter().zip(fit.row(d, t)) {
                err += (y - yh).norm_sqr();
                total += y.norm_sqr();
            }
        }
    }
    Ok(ratio_db(err, total))
}

/// Energies of the target, moderate and final components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnergies {
    pub target: f64,
    pub moderate: f64,
    pub final_part: f64,
}

pub fn component_energies(rir: &EstimatedRir, dry: &Spectrogram, frames: Range<usize>) -> Result<ComponentEnergies> {
    let [v, m, phi] = rir.partition();
    let energy = |taps: Range<usize>| -> Result<f64> {
        let s = rir.filter(dry, taps)?;
        let mut e = 0.0;
        for d in 0..s.num_channels() {
            for t in frames.start..frames.end.min(s.num_frames()) {
                e += s.row(d, t).iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        Ok(e)
    };
    Ok(ComponentEnergies { target: energy(v)?, moderate: energy(m)?, final_part: energy(phi)? })
}

/// Early-to-late, early-to-moderate and early-to-final ratios in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbRatios {
    pub elr: f64,
    pub emr: f64,
    pub efr: f64,
}

pub fn elr_emr_efr(e: &ComponentEnergies) -> Result<ReverbRatios> {
    if !(e.target > 0.0) {
        return Err(Error::ZeroEnergy("target component".into()));
    }
    Ok(ReverbRatios {
        elr: ratio_db(e.target, e.moderate + e.final_part),
        emr: ratio_db(e.target, e.moderate),
        efr: ratio_db(e.target, e.final_part),
    })
}

/// Ratios predicted from the RIR taps alone, for white dry excitation.
/// Tap `d` of the frame-domain response collects the samples nearest to
/// `(δ* + d)·hop`, so the boundaries sit half a hop before the grid points
/// rather than at the propagation delay itself.
pub fn analytic_ratios(rir: &RoomImpulseResponse, delta_tilde: usize, moderate: usize) -> Result<ReverbRatios> {
    let grid = (rir.propagation_delay / HOP_SAMPLES) * HOP_SAMPLES;
    let b1 = (grid + delta_tilde * HOP_SAMPLES).saturating_sub(HOP_SAMPLES / 2);
    let b2 = b1 + moderate * HOP_SAMPLES;
    elr_emr_efr(&ComponentEnergies {
        target: rir.energy_in(0..b1),
        moderate: rir.energy_in(b1..b2),
        final_part: rir.energy_in(b2..rir.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSdr {
    pub snr: f64,
    pub sdr: f64,
}

/// SNR against `target` and scale-invariant SDR, each channel projected
/// separately and the energies pooled.
pub fn snr_sdr(target: &AudioBuffer, estimate: &AudioBuffer) -> Result<SnrSdr> {
    if target.num_channels() != estimate.num_channels() || target.len() != estimate.len() {
        return Err(Error::shape(format!(
            "target {}x{} vs estimate {}x{}",
            target.num_channels(),
            target.len(),
            estimate.num_channels(),
            estimate.len()
        )));
    }
    let energy = target.energy();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy("target signal".into()));
    }
    let (mut noise, mut projected, mut distortion) = (0.0, 0.0, 0.0);
    for (v, vh) in target.channels().zip(estimate.channels()) {
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let dot: f64 = v.iter().zip(vh).map(|(a, b)| a * b).sum();
        let scale = if vv > 0.0 { dot / vv } else { 0.0 };
        for (a, b) in v.iter().zip(vh) {
            noise += (b - a).powi(2);
            let s = scale * a;
            projected += s * s;
            distortion += (b - s).powi(2);
        }
    }
    Ok(SnrSdr { snr: ratio_db(energy, noise), sdr: ratio_db(projected, distortion) })
}

/// Lag in samples (≥ 0) maximizing the cross-correlation of `dry` with
/// channel 0 of `proc`, searched up to `max_lag`.
pub fn delay_from_xcorr(dry: &[f64], proc: &[f64], max_lag: usize) -> Result<usize> {
    if dry.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroEnergy("dry signal".into()));
    }
    let n = (dry.len() + proc.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (pad(dry), pad(proc));
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut r: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut r);
    Ok((0..=max_lag.min(n - 1))
        .max_by(|&i, &j| r[i].re.abs().total_cmp(&r[j].re.abs()))
        .unwrap_or(0))
}

/// Reverberation-time bucket label used in reports.
pub fn t60_bucket(t60: f64) -> Option<&'static str> {
    match t60 {
        x if (0.4..0.55).contains(&x) => Some("0.4-0.55"),
        x if (0.55..0.7).contains(&x) => Some("0.55-0.7"),
        x if (0.7..0.85).contains(&x) => Some("0.7-0.85"),
        x if (0.85..=1.0).contains(&x) => Some("0.85-1.0"),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySource {
    Oracle,
    CrossCorrelation,
}

/// One utterance worth of metrics, flat so it maps onto a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub utterance: String,
    /// Segment index when the report covers a single segment.
    pub segment: Option<usize>,
    pub mode: String,
    pub profile: String,
    pub t60: f64,
    pub t60_bucket: Option<String>,
    pub elr: f64,
    pub emr: f64,
    pub efr: f64,
    pub snr: f64,
    pub sdr: f64,
    pub delta_star: usize,
    pub delay_source: DelaySource,
    pub regression_error_db: f64,
    pub order: usize,
    pub frames_evaluated: usize,
}
