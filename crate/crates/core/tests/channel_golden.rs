//! Frozen reference output of the impairment chain. Any change to stage
//! order, randomness consumption, or stage arithmetic shows up here.

use rand::SeedableRng;
use satlink_core::channel::{propagate, ImpairmentConfig};
use satlink_core::waveform::{build_frame, random_bits, OfdmParams, QamConstellation};

#[derive(serde::Deserialize)]
struct Golden {
    #[allow(dead_code)]
    description: String,
    samples_re_im: Vec<[f64; 2]>,
}

#[test]
fn propagate_matches_golden_vector() {
    let golden: Golden = serde_json::from_str(include_str!("data/propagate_golden.json")).unwrap();

    let params = OfdmParams {
        n_fft: 64,
        subcarrier_spacing_hz: 15_000.0,
        n_cp: 8,
        n_occupied: 64,
    };
    let c4 = QamConstellation::qam4();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let bits = random_bits(&mut rng, 2 * 64 * 2);
    let frame = build_frame(&bits, 77, &c4, &params).unwrap();
    let cfg = ImpairmentConfig {
        seed: 7,
        ..ImpairmentConfig::default()
    };
    let rx = propagate(&frame, &cfg).unwrap();

    assert_eq!(golden.samples_re_im.len(), 8);
    for (got, want) in rx.pilot_symbol.samples.iter().zip(&golden.samples_re_im) {
        assert!(
            (got.re - want[0]).abs() < 1e-12 && (got.im - want[1]).abs() < 1e-12,
            "golden mismatch: got {got}, want {want:?}"
        );
    }
}
