//! Shared fixtures for the benchmark targets.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satlink_core::numerics::CVector;
use satlink_core::receivers::TapDelayMatrix;
use satlink_core::waveform::{build_frame, random_bits, Frame, OfdmParams, QamConstellation};

/// A training instance at the reference dimensions: `n` received samples
/// over `taps` input taps, with a matching pilot target.
pub fn training_fixture(n: usize, taps: usize, seed: u64) -> (TapDelayMatrix, CVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<Complex64> = (0..n + taps - 1)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let z = satlink_core::receivers::build_tap_matrix(&y, n, taps).unwrap();
    let x = CVector::from_fn(n, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    (z, x)
}

/// A default-numerology frame for channel benchmarks.
pub fn reference_frame(seed: u64) -> (Frame, OfdmParams) {
    let params = OfdmParams::default();
    let c4 = QamConstellation::qam4();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = random_bits(&mut rng, 2 * params.n_occupied * 13);
    let frame = build_frame(&bits, seed, &c4, &params).unwrap();
    (frame, params)
}
