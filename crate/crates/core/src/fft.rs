//! Unitary FFT helpers on top of rustfft.
//!
//! rustfft transforms are unnormalized; everything here scales by `1/sqrt(n)`
//! so that forward and inverse are exact inverses and preserve energy.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn run(data: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = data.len();
    assert!(n > 0, "fft of empty slice");
    let mut buf = data.to_vec();
    plan(n, inverse).process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Unitary forward DFT.
pub fn forward(data: &[Complex64]) -> Vec<Complex64> {
    run(data, false)
}

/// Unitary inverse DFT.
pub fn inverse(data: &[Complex64]) -> Vec<Complex64> {
    run(data, true)
}
