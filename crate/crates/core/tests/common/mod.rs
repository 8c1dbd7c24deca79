//! Oracles shared by integration tests.

use derev_core::psd::PsdFrame;
use derev_core::signal::Frame;
use derev_core::wpe::{WpeParams, WpeState};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `G_T = R_T^{-1} P_T` with
/// `R_T = α^T I + (1-α) Σ α^{T-t} X_t X_tᴴ / λ_t` and
/// `P_T = (1-α) Σ α^{T-t} X_t x_tᴴ / λ_t`, where `X_t` stacks
/// `x_{t-Δ} .. x_{t-Δ-K+1}` (zeros before the start).
pub fn batch_filter(
    frames: &[Vec<Complex64>],
    lambdas: &[f64],
    channels: usize,
    taps: usize,
    delay: usize,
    alpha: f64,
) -> DMatrix<Complex64> {
    let n = channels * taps;
    let t_total = frames.len();
    let mut r = DMatrix::<Complex64>::identity(n, n) * Complex64::new(alpha.powi(t_total as i32), 0.0);
    let mut p = DMatrix::<Complex64>::zeros(n, channels);
    for t in 0..t_total {
        let mut x = DVector::<Complex64>::zeros(n);
        for k in 0..taps {
            let lag = delay + k;
            if t >= lag {
                for d in 0..channels {
                    x[k * channels + d] = frames[t - lag][d];
                }
            }
        }
        let w = (1.0 - alpha) * alpha.powi((t_total - 1 - t) as i32) / lambdas[t];
        let cur = DVector::from_vec(frames[t].clone());
        r += &x * x.adjoint() * Complex64::new(w, 0.0);
        p += &x * cur.adjoint() * Complex64::new(w, 0.0);
    }
    r.lu().solve(&p).expect("weighted covariance is invertible")
}

/// Largest coefficient gap between the recursive and batch filters.
pub fn max_abs_diff(channels: usize, taps: usize, delay: usize, t_total: usize, seed: u64, weighted: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = 0.99;
    let frames: Vec<Vec<Complex64>> = (0..t_total)
        .map(|_| {
            (0..channels)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let lambdas: Vec<f64> = (0..t_total)
        .map(|_| if weighted { rng.random_range(0.2..3.0) } else { 1.0 })
        .collect();

    let params = WpeParams { channels, taps, delay, alpha, epsilon: 0.0, bins: 1 };
    let mut state = WpeState::new(params).unwrap();
    for (fr, lam) in frames.iter().zip(&lambdas) {
        let x = Frame::from_vec(channels, 1, fr.clone()).unwrap();
        state.step(&x, &PsdFrame::constant(1, *lam)).unwrap();
    }
    let expect = batch_filter(&frames, &lambdas, channels, taps, delay, alpha);
    let g = state.filter(0);
    let mut worst: f64 = 0.0;
    for i in 0..channels * taps {
        for d in 0..channels {
            worst = worst.max((g[i * channels + d] - expect[(i, d)]).norm());
        }
    }
    worst
}
