//! Magnitude-only Wiener post-filter driven by target/interference masks.
//! One mask pair (from the reference channel) is applied to every channel,
//! so per-bin gains are shared and interaural level and phase differences
//! pass through untouched.

use crate::error::{Error, Result};
use crate::psd::{mask_to_psd, MaskFrame, PsdFrame};
use crate::signal::Frame;

/// `λ_v / (λ_v + λ_r)` per bin; bins with `λ_v = 0` get gain 0.
pub fn wiener_gain(lambda_v: &PsdFrame, lambda_r: &PsdFrame) -> Result<Vec<f64>> {
    if lambda_v.len() != lambda_r.len() {
        return Err(Error::shape("target and interference PSDs differ in length"));
    }
    lambda_v
        .values()
        .iter()
        .zip(lambda_r.values())
        .enumerate()
        .map(|(bin, (&v, &r))| {
            if v < 0.0 || r < 0.0 {
                return Err(Error::NegativePsd { channel: 0, bin, value: v.min(r) });
            }
            Ok(if v > 0.0 { v / (v + r) } else { 0.0 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostfilterOptions {
    /// Lower bound on the gain; 0 applies the plain Wiener gain.
    pub min_gain: f64,
}

impl Default for PostfilterOptions {
    fn default() -> Self {
        Self { min_gain: 0.0 }
    }
}

/// Filters every channel of `frame` with its own mask-derived PSDs.
pub fn apply(
    target_mask: &MaskFrame,
    interference_mask: &MaskFrame,
    frame: &Frame,
    options: PostfilterOptions,
) -> Result<Frame> {
    let bins = frame.num_bins();
    if target_mask.len() != bins || interference_mask.len() != bins {
        return Err(Error::shape(format!(
            "masks have {}/{} bins, frame has {bins}",
            target_mask.len(),
            interference_mask.len()
        )));
    }
    let mut out = frame.clone();
    for d in 0..frame.num_channels() {
        let magnitude = frame.magnitude(d);
        let lambda_v = mask_to_psd(target_mask, &magnitude)?;
        let lambda_r = mask_to_psd(interference_mask, &magnitude)?;
        let gain = wiener_gain(&lambda_v, &lambda_r)?;
        for (z, g) in out.channel_mut(d).iter_mut().zip(gain) {
            *z *= g.max(options.min_gain);
        }
    }
    Ok(out)
}

/// Channel-independent gain `m_v² / (m_v² + m_r²)` that [`apply`] reduces
/// to wherever the channel magnitude is nonzero.
pub fn closed_form_gain(target_mask: &MaskFrame, interference_mask: &MaskFrame) -> Vec<f64> {
    target_mask
        .values()
        .iter()
        .zip(interference_mask.values())
        .map(|(v, r)| {
            let (v2, r2) = (v * v, r * r);
            if v2 > 0.0 {
                v2 / (v2 + r2)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn frame(values: &[(f64, f64)], channels: usize) -> Frame {
        let bins = values.len() / channels;
        Frame::from_vec(channels, bins, values.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn gain_edge_cases() {
        let g = wiener_gain(&PsdFrame::constant(3, 2.0), &PsdFrame::constant(3, 2.0)).unwrap();
        assert_eq!(g, vec![0.5; 3]);
        let g = wiener_gain(&PsdFrame::constant(3, 2.0), &PsdFrame::constant(3, 0.0)).unwrap();
        assert_eq!(g, vec![1.0; 3]);
        let g = wiener_gain(
            &PsdFrame::new(vec![0.0, 0.0]).unwrap(),
            &PsdFrame::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let neg = PsdFrame::new_unchecked(vec![1.0, -1.0]);
        assert!(matches!(wiener_gain(&neg, &PsdFrame::constant(2, 1.0)), Err(Error::NegativePsd { bin: 1, .. })));
    }

    #[test]
    fn equal_masks_halve_every_bin() {
        let fr = frame(&[(1.0, 2.0), (-3.0, 0.5), (0.2, 0.2), (4.0, -1.0)], 2);
        let m = MaskFrame::new(vec![0.3, 0.8]).unwrap();
        let out = apply(&m, &m, &fr, PostfilterOptions::default()).unwrap();
        for (a, b) in out.as_slice().iter().zip(fr.as_slice()) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn zero_interference_mask_is_identity() {
        let fr = frame(&[(1.0, 2.0), (-3.0, 0.5), (0.2, 0.2), (4.0, -1.0)], 2);
        let out = apply(
            &MaskFrame::new(vec![0.3, 0.8]).unwrap(),
            &MaskFrame::constant(2, 0.0).unwrap(),
            &fr,
            PostfilterOptions::default(),
        )
        .unwrap();
        assert_eq!(out, fr);
    }

    #[test]
    fn min_gain_floors_attenuation() {
        let fr = frame(&[(1.0, 0.0), (0.0, 1.0)], 1);
        let out = apply(
            &MaskFrame::constant(2, 0.0).unwrap(),
            &MaskFrame::constant(2, 1.0).unwrap(),
            &fr,
            PostfilterOptions { min_gain: 0.1 },
        )
        .unwrap();
        assert_eq!(out.get(0, 0), Complex64::new(0.1, 0.0));
        assert_eq!(out.get(0, 1), Complex64::new(0.0, 0.1));
    }

    #[test]
    fn shape_mismatch() {
        let fr = frame(&[(1.0, 0.0), (0.0, 1.0)], 1);
        let m = MaskFrame::constant(3, 0.5).unwrap();
        assert!(matches!(apply(&m, &m, &fr, PostfilterOptions::default()), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn gain_is_bounded_shared_and_phase_preserving(
            cells in proptest::collection::vec(
                (0.0f64..=1.0, 0.0f64..=1.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
                1..32,
            ),
            scale in 0.01f64..100.0,
        ) {
            let mv = MaskFrame::new(cells.iter().map(|c| c.0).collect()).unwrap();
            let mr = MaskFrame::new(cells.iter().map(|c| c.1).collect()).unwrap();
            let bins = cells.len();
            let mut data: Vec<Complex64> = cells.iter().map(|c| Complex64::new(c.2, c.3)).collect();
            data.extend(cells.iter().map(|c| Complex64::new(c.4, c.5)));
            let fr = Frame::from_vec(2, bins, data).unwrap();
            let out = apply(&mv, &mr, &fr, PostfilterOptions::default()).unwrap();
            let closed = closed_form_gain(&mv, &mr);
            for (f, &cf) in closed.iter().enumerate() {
                let (a0, a1) = (fr.get(0, f), fr.get(1, f));
                let (b0, b1) = (out.get(0, f), out.get(1, f));
                prop_assert!(b0.norm() <= a0.norm() && b1.norm() <= a1.norm());
                if a0.norm() > 0.0 && a1.norm() > 0.0 {
                    let g0 = b0.norm() / a0.norm();
                    let g1 = b1.norm() / a1.norm();
                    prop_assert!((0.0..=1.0).contains(&g0));
                    prop_assert!((g0 - g1).abs() < 1e-12);
                    prop_assert!((g0 - cf).abs() < 1e-12);
                    if g0 > 0.0 {
                        // Interaural phase and level differences survive.
                        prop_assert!(((b0 * b1.conj()).arg() - (a0 * a1.conj()).arg()).abs() < 1e-9);
                        prop_assert!((b0.norm() / b1.norm() - a0.norm() / a1.norm()).abs() < 1e-9 * (a0.norm() / a1.norm()).max(1.0));
                    }
                }
            }
            let scaled = apply(&mv, &mr, &fr.scaled(Complex64::new(scale, 0.0)), PostfilterOptions::default()).unwrap();
            for (x, y) in scaled.as_slice().iter().zip(out.as_slice()) {
                prop_assert!((x - y * scale).norm() <= 1e-12 * (y.norm() * scale).max(1e-12));
            }
        }
    }
}
