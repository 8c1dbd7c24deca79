//! Sequential vs rayon-parallel cost of the per-bin work: one RLS-WPE frame
//! update and one RIR regression. On a single-core machine the two paths
//! should come out about even.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use derev_core::metrics::{estimate_rir, RegressionSpec};
use derev_core::psd::PsdFrame;
use derev_core::signal::{Frame, PipelineConfig, Spectrogram};
use derev_core::wpe::WpeState;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BINS: usize = 257;

fn random_frame(rng: &mut ChaCha8Rng, channels: usize) -> Frame {
    let data = (0..channels * BINS).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    Frame::from_vec(channels, BINS, data.collect()).unwrap()
}

fn wpe_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("wpe_step");
    let config = PipelineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames: Vec<Frame> = (0..64).map(|_| random_frame(&mut rng, config.channels)).collect();
    let psd = PsdFrame::constant(BINS, 1.0);
    for parallel in [false, true] {
        let mut state = WpeState::from_config(&config, BINS).unwrap().with_parallel(parallel);
        // Fill the delay line so every step does the full update.
        for f in &frames {
            state.step(f, &psd).unwrap();
        }
        let mut i = 0;
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(BenchmarkId::new(label, "D2_K10"), |b| {
            b.iter(|| {
                i = (i + 1) % frames.len();
                state.step(&frames[i], &psd).unwrap()
            })
        });
    }
    group.finish();
}

fn rir_regression(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate_rir");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames = 600;
    let mut dry = Spectrogram::zeros(1, frames, BINS, frames * 128);
    let mut proc = Spectrogram::zeros(2, frames, BINS, frames * 128);
    for t in 0..frames {
        for f in 0..BINS {
            dry.set(0, t, f, Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            for d in 0..2 {
                proc.set(d, t, f, Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
        }
    }
    let spec = RegressionSpec { order: 40, delta_star: 0, delta_tilde: 5, moderate: 10, frames: None };
    for parallel in [false, true] {
        let label = if parallel { "parallel" } else { "sequential" };
        group.bench_function(BenchmarkId::new(label, "P40_T600"), |b| {
            b.iter(|| estimate_rir(&dry, &proc, &spec, parallel).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, wpe_step, rir_regression);
criterion_main!(benches);
