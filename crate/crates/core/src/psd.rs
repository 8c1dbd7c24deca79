//! Anechoic-speech PSD sources for the linear filter and mask-to-PSD
//! conversion for the post-filter. Everything is driven by the reference
//! channel, index 0.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::lstm::{LstmMaskModel, ModelState};
use crate::signal::Frame;

pub const REFERENCE_CHANNEL: usize = 0;

/// Nonnegative per-bin power estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFrame(Vec<f64>);

impl PsdFrame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (bin, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("PSD bin {bin}")));
            }
            if v < 0.0 {
                return Err(Error::NegativePsd { channel: 0, bin, value: v });
            }
        }
        Ok(Self(values))
    }

    /// Skips validation; callers such as [`crate::wpe::WpeState::step`]
    /// re-check before use.
    pub fn new_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(bins: usize, value: f64) -> Self {
        Self(vec![value; bins])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Time-frequency mask with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame(Vec<f64>);

impl MaskFrame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((bin, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::shape(format!("mask value {v} at bin {bin} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn constant(bins: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; bins])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 - m`, elementwise.
    pub fn complement(&self) -> MaskFrame {
        MaskFrame(self.0.iter().map(|m| 1.0 - m).collect())
    }
}

/// `|v_0|^2` of the (oracle) target frame.
pub fn oracle_psd(target: &Frame) -> PsdFrame {
    PsdFrame(target.channel(REFERENCE_CHANNEL).iter().map(|z| z.norm_sqr()).collect())
}

/// `(m * |x|)^2`, elementwise.
pub fn mask_to_psd(mask: &MaskFrame, magnitude: &[f64]) -> Result<PsdFrame> {
    if mask.len() != magnitude.len() {
        return Err(Error::shape(format!(
            "mask has {} bins, magnitude has {}",
            mask.len(),
            magnitude.len()
        )));
    }
    Ok(PsdFrame(mask.0.iter().zip(magnitude).map(|(m, a)| (m * a).powi(2)).collect()))
}

/// Recursive smoothing of the reference-channel periodogram.
#[derive(Debug, Clone)]
pub struct SmoothedPeriodogram {
    beta: f64,
    state: Option<Vec<f64>>,
}

impl SmoothedPeriodogram {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::config(format!("smoothing constant must lie in [0, 1), got {beta}")));
        }
        Ok(Self { beta, state: None })
    }

    /// `lambda_t = beta lambda_{t-1} + (1 - beta) |x_{0,t}|^2`, seeded with the
    /// first periodogram.
    pub fn update(&mut self, x: &Frame) -> PsdFrame {
        let periodogram = x.channel(REFERENCE_CHANNEL).iter().map(|z| z.norm_sqr());
        let beta = self.beta;
        let state = self.state.get_or_insert_with(|| {
            x.channel(REFERENCE_CHANNEL).iter().map(|z| z.norm_sqr()).collect()
        });
        for (s, p) in state.iter_mut().zip(periodogram) {
            *s = beta * *s + (1.0 - beta) * p;
        }
        PsdFrame(state.clone())
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Frame-by-frame provider of the PSD that weights the linear filter.
pub trait PsdSource {
    fn estimate(&mut self, x: &Frame) -> Result<PsdFrame>;
}

/// Oracle PSD from target frames queued ahead of the mixture frames.
#[derive(Debug, Default, Clone)]
pub struct OracleSource {
    queue: VecDeque<Frame>,
}

impl OracleSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_frames(frames: impl IntoIterator<Item = Frame>) -> Self {
        Self { queue: frames.into_iter().collect() }
    }

    pub fn push_target(&mut self, frame: Frame) {
        self.queue.push_back(frame);
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

impl PsdSource for OracleSource {
    fn estimate(&mut self, _x: &Frame) -> Result<PsdFrame> {
        let target = self
            .queue
            .pop_front()
            .ok_or_else(|| Error::Empty("oracle target stream ran out of frames".into()))?;
        Ok(oracle_psd(&target))
    }
}

impl PsdSource for SmoothedPeriodogram {
    fn estimate(&mut self, x: &Frame) -> Result<PsdFrame> {
        Ok(self.update(x))
    }
}

/// Mask network on `|x_0|`, PSD by masking.
pub struct NeuralSource<'m> {
    model: &'m LstmMaskModel,
    state: ModelState,
}

impl<'m> NeuralSource<'m> {
    pub fn new(model: &'m LstmMaskModel) -> Self {
        Self { state: model.initial_state(), model }
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }
}

impl PsdSource for NeuralSource<'_> {
    fn estimate(&mut self, x: &Frame) -> Result<PsdFrame> {
        let magnitude = x.magnitude(REFERENCE_CHANNEL);
        let masks = self.model.step(&mut self.state, &magnitude)?;
        mask_to_psd(&masks[0], &magnitude)
    }
}

/// A constant PSD, used where the weighting is fixed (e.g. least-squares checks).
#[derive(Debug, Clone)]
pub struct ConstantSource(pub PsdFrame);

impl PsdSource for ConstantSource {
    fn estimate(&mut self, _x: &Frame) -> Result<PsdFrame> {
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(channels: usize, bins: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * bins)
            .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        Frame::from_vec(channels, bins, data).unwrap()
    }

    #[test]
    fn oracle_basics() {
        assert!(oracle_psd(&Frame::zeros(2, 9)).values().iter().all(|&v| v == 0.0));
        let mut unit = Frame::zeros(1, 9);
        for f in 0..9 {
            let phi = f as f64;
            unit.set(0, f, Complex64::from_polar(1.0, phi));
        }
        for v in oracle_psd(&unit).values() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let fr = random_frame(2, 33, 1);
        let psd = oracle_psd(&fr);
        for f in 0..33 {
            let z = fr.get(0, f);
            assert_eq!(psd.values()[f], z.re * z.re + z.im * z.im);
        }
    }

    #[test]
    fn smoothing_converges_to_constant_magnitude() {
        let mut s = SmoothedPeriodogram::new(0.85).unwrap();
        let mut x = Frame::zeros(1, 4);
        for f in 0..4 {
            x.set(0, f, Complex64::new(0.0, 0.1));
        }
        s.update(&x);
        for f in 0..4 {
            x.set(0, f, Complex64::new(3.0, 0.0));
        }
        let mut prev_gap = f64::INFINITY;
        for _ in 0..50 {
            let gap = (s.update(&x).values()[0] - 9.0).abs();
            assert!(gap <= prev_gap * 0.85 + 1e-12);
            prev_gap = gap;
        }
        assert!(prev_gap < 9.0 * 0.85f64.powi(50));
    }

    #[test]
    fn beta_zero_is_instantaneous() {
        let mut s = SmoothedPeriodogram::new(0.0).unwrap();
        for seed in 0..5 {
            let fr = random_frame(2, 16, seed);
            assert_eq!(s.update(&fr), oracle_psd(&fr));
        }
    }

    #[test]
    fn smoothing_matches_unrolled_recursion() {
        let beta = 0.85;
        let frames: Vec<Frame> = (0..10).map(|s| random_frame(1, 8, 10 + s)).collect();
        let p: Vec<Vec<f64>> = frames.iter().map(|fr| oracle_psd(fr).values().to_vec()).collect();
        let mut s = SmoothedPeriodogram::new(beta).unwrap();
        let mut last = Vec::new();
        for fr in &frames {
            last = s.update(fr).values().to_vec();
        }
        // lambda_9 = beta^10 p_0 + sum_{t=0}^{9} beta^(9-t) (1 - beta) p_t
        for f in 0..8 {
            let mut expect = beta.powi(10) * p[0][f];
            for (t, pt) in p.iter().enumerate() {
                expect += beta.powi(9 - t as i32) * (1.0 - beta) * pt[f];
            }
            assert!((last[f] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_to_psd_identities() {
        let mag = vec![2.0; 5];
        assert_eq!(mask_to_psd(&MaskFrame::constant(5, 1.0).unwrap(), &mag).unwrap().values(), &[4.0; 5]);
        assert_eq!(mask_to_psd(&MaskFrame::constant(5, 0.0).unwrap(), &mag).unwrap().values(), &[0.0; 5]);
        assert_eq!(mask_to_psd(&MaskFrame::constant(5, 0.5).unwrap(), &mag).unwrap().values(), &[1.0; 5]);
        assert!(matches!(mask_to_psd(&MaskFrame::constant(4, 0.5).unwrap(), &mag), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_inputs() {
        assert!(MaskFrame::new(vec![0.2, 1.1]).is_err());
        assert!(matches!(PsdFrame::new(vec![1.0, -0.5]), Err(Error::NegativePsd { bin: 1, .. })));
        assert!(SmoothedPeriodogram::new(1.0).is_err());
    }

    #[test]
    fn non_reference_channels_do_not_matter() {
        let a = random_frame(2, 16, 3);
        let mut b = a.clone();
        b.channel_mut(1).iter_mut().for_each(|z| *z *= 7.0);
        assert_eq!(oracle_psd(&a), oracle_psd(&b));
        let mut s1 = SmoothedPeriodogram::new(0.85).unwrap();
        let mut s2 = SmoothedPeriodogram::new(0.85).unwrap();
        assert_eq!(s1.update(&a), s2.update(&b));
    }

    proptest! {
        #[test]
        fn masked_psd_never_exceeds_periodogram(
            pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..100.0), 1..64)
        ) {
            let (m, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let psd = mask_to_psd(&MaskFrame::new(m).unwrap(), &a).unwrap();
            for (l, x) in psd.values().iter().zip(&a) {
                prop_assert!(*l <= x * x);
            }
        }

        #[test]
        fn smoothed_psd_stays_within_observed_range(
            mags in proptest::collection::vec(0.0f64..10.0, 1..40),
            beta in 0.0f64..0.99,
        ) {
            let mut s = SmoothedPeriodogram::new(beta).unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for m in mags {
                let mut fr = Frame::zeros(1, 1);
                fr.set(0, 0, Complex64::new(m, 0.0));
                lo = lo.min(m * m);
                hi = hi.max(m * m);
                let l = s.update(&fr).values()[0];
                prop_assert!(l >= lo * (1.0 - 1e-12) && l <= hi * (1.0 + 1e-12));
            }
        }
    }
}
