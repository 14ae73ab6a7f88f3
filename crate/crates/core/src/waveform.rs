//! Bits to baseband and back: Gray-coded QAM, DFT-s-OFDM modulation with
//! cyclic prefix, pilot generation, and frame assembly.
//!
//! Gray mapping convention (fixed): bits are consumed most-significant
//! first, the first half of a label addresses the in-phase axis and the
//! second half the quadrature axis. Per-axis Gray code:
//!
//! * 1 bit/axis (4-QAM):  `0 -> +1`, `1 -> -1`, scaled by `1/sqrt(2)`.
//! * 2 bits/axis (16-QAM): `00 -> +3`, `01 -> +1`, `11 -> -1`, `10 -> -3`,
//!   scaled by `1/sqrt(10)`.
//!
//! Both tables have unit mean symbol energy and the Gray property (nearest
//! neighbours differ in exactly one bit).

use crate::{fft, ComplexSignal, Error, Result};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A Gray-coded square QAM constellation of order 4 or 16.
#[derive(Debug, Clone)]
pub struct QamConstellation {
    pub order: usize,
    /// Point for each integer label (bits read MSB-first).
    pub points: Vec<Complex64>,
    /// Bit pattern for each point index.
    pub bit_labels: Vec<Vec<u8>>,
}

/// Per-axis Gray amplitude levels, most positive first.
fn gray_axis(bits: usize) -> Vec<(Vec<u8>, f64)> {
    match bits {
        1 => vec![(vec![0], 1.0), (vec![1], -1.0)],
        2 => vec![
            (vec![0, 0], 3.0),
            (vec![0, 1], 1.0),
            (vec![1, 1], -1.0),
            (vec![1, 0], -3.0),
        ],
        _ => unreachable!("unsupported axis width"),
    }
}

impl QamConstellation {
    pub fn qam4() -> Self {
        Self::build(4)
    }

    pub fn qam16() -> Self {
        Self::build(16)
    }

    pub fn for_order(order: usize) -> Result<Self> {
        match order {
            4 | 16 => Ok(Self::build(order)),
            _ => Err(Error::input(format!("unsupported QAM order {order}"))),
        }
    }

    fn build(order: usize) -> Self {
        let axis_bits = match order {
            4 => 1,
            16 => 2,
            _ => unreachable!(),
        };
        let axis = gray_axis(axis_bits);
        // Mean energy of one axis is the mean squared level; two axes add.
        let mean_axis: f64 = axis.iter().map(|(_, a)| a * a).sum::<f64>() / axis.len() as f64;
        let scale = 1.0 / (2.0 * mean_axis).sqrt();

        let mut points = Vec::with_capacity(order);
        let mut bit_labels = Vec::with_capacity(order);
        for (i_bits, i_amp) in &axis {
            for (q_bits, q_amp) in &axis {
                let mut label = i_bits.clone();
                label.extend_from_slice(q_bits);
                points.push(Complex64::new(i_amp * scale, q_amp * scale));
                bit_labels.push(label);
            }
        }
        // Reorder so that points[label_value] corresponds to the label read
        // as a big-endian integer.
        let mut ordered_points = vec![Complex64::new(0.0, 0.0); order];
        let mut ordered_labels = vec![Vec::new(); order];
        for (p, l) in points.into_iter().zip(bit_labels) {
            let idx = l.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
            ordered_points[idx] = p;
            ordered_labels[idx] = l;
        }
        Self {
            order,
            points: ordered_points,
            bit_labels: ordered_labels,
        }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }
}

/// DFT-s-OFDM numerology. `n_occupied = n_fft` is the fully loaded case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfdmParams {
    pub n_fft: usize,
    pub subcarrier_spacing_hz: f64,
    pub n_cp: usize,
    pub n_occupied: usize,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            n_fft: 1024,
            subcarrier_spacing_hz: 15_000.0,
            n_cp: 72,
            n_occupied: 1024,
        }
    }
}

impl OfdmParams {
    pub fn sample_rate_hz(&self) -> f64 {
        self.n_fft as f64 * self.subcarrier_spacing_hz
    }

    /// Samples per DFT-s-OFDM symbol including the cyclic prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.n_cp
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.n_occupied == 0 {
            return Err(Error::input("n_fft and n_occupied must be >= 1"));
        }
        if self.n_cp >= self.n_fft {
            return Err(Error::input(format!(
                "cyclic prefix {} must be shorter than n_fft {}",
                self.n_cp, self.n_fft
            )));
        }
        if self.n_occupied > self.n_fft {
            return Err(Error::input(format!(
                "n_occupied {} exceeds n_fft {}",
                self.n_occupied, self.n_fft
            )));
        }
        if self.subcarrier_spacing_hz <= 0.0 {
            return Err(Error::input("subcarrier spacing must be positive"));
        }
        Ok(())
    }
}

/// One transmission frame: a pilot symbol followed by data symbols.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pilot_symbol: ComplexSignal,
    pub data_symbols: Vec<ComplexSignal>,
    pub pilot_qam: Vec<Complex64>,
    pub tx_bits: Vec<u8>,
}

impl Frame {
    pub fn n_symbols(&self) -> usize {
        1 + self.data_symbols.len()
    }
}

/// Map a bit stream onto constellation points. The bit count must divide
/// evenly into symbols.
pub fn qam_map(bits: &[u8], constellation: &QamConstellation) -> Result<Vec<Complex64>> {
    let bps = constellation.bits_per_symbol();
    if !bits.len().is_multiple_of(bps) {
        return Err(Error::input(format!(
            "bit count {} is not divisible by {} bits/symbol",
            bits.len(),
            bps
        )));
    }
    if let Some(&b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::input(format!("bit values must be 0 or 1, got {b}")));
    }
    Ok(bits
        .chunks_exact(bps)
        .map(|chunk| {
            let idx = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
            constellation.points[idx]
        })
        .collect())
}

/// Hard-decision minimum-distance demapping. Ties break toward the lowest
/// point index.
pub fn qam_demap(symbols: &[Complex64], constellation: &QamConstellation) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * constellation.bits_per_symbol());
    for &s in symbols {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (idx, &p) in constellation.points.iter().enumerate() {
            let d = (s - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        bits.extend_from_slice(&constellation.bit_labels[best]);
    }
    bits
}

/// From QAM symbols to the frequency-domain subcarrier vector: unitary
/// DFT spreading followed by natural-order subcarrier mapping.
pub fn spread_to_subcarriers(qam: &[Complex64], params: &OfdmParams) -> Result<Vec<Complex64>> {
    params.validate()?;
    if qam.len() != params.n_occupied {
        return Err(Error::dim(format!(
            "expected {} QAM symbols, got {}",
            params.n_occupied,
            qam.len()
        )));
    }
    let spread = fft::forward(qam);
    let mut bins = vec![Complex64::new(0.0, 0.0); params.n_fft];
    bins[..params.n_occupied].copy_from_slice(&spread);
    Ok(bins)
}

/// DFT-s-OFDM modulation: spread, map, inverse transform, prepend the
/// cyclic prefix (a copy of the last `n_cp` body samples).
pub fn dfts_ofdm_modulate(qam: &[Complex64], params: &OfdmParams) -> Result<ComplexSignal> {
    let bins = spread_to_subcarriers(qam, params)?;
    let body = fft::inverse(&bins);
    let mut samples = Vec::with_capacity(params.symbol_len());
    samples.extend_from_slice(&body[params.n_fft - params.n_cp..]);
    samples.extend_from_slice(&body);
    Ok(ComplexSignal::new(samples, params.sample_rate_hz()))
}

/// Forward transform of a CP-less symbol body onto the occupied subcarriers.
pub fn body_to_subcarriers(body: &[Complex64], params: &OfdmParams) -> Result<Vec<Complex64>> {
    params.validate()?;
    if body.len() != params.n_fft {
        return Err(Error::dim(format!(
            "body length {} != n_fft {}",
            body.len(),
            params.n_fft
        )));
    }
    let bins = fft::forward(body);
    Ok(bins[..params.n_occupied].to_vec())
}

/// Inverse DFT despreading of equalized subcarrier values back to QAM.
pub fn subcarriers_to_qam(subcarriers: &[Complex64]) -> Vec<Complex64> {
    fft::inverse(subcarriers)
}

/// Inverse of [`dfts_ofdm_modulate`]: CP removal, forward transform, and
/// despreading. Returns `(subcarrier values, despread QAM estimates)`.
pub fn dfts_ofdm_demodulate(
    sig: &ComplexSignal,
    params: &OfdmParams,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    params.validate()?;
    if sig.len() != params.symbol_len() {
        return Err(Error::dim(format!(
            "symbol length {} != n_fft + n_cp = {}",
            sig.len(),
            params.symbol_len()
        )));
    }
    let body = &sig.samples[params.n_cp..];
    let subcarriers = body_to_subcarriers(body, params)?;
    let despread = subcarriers_to_qam(&subcarriers);
    Ok((subcarriers, despread))
}

/// Deterministic pseudo-random pilot: QAM symbols drawn from a seeded
/// stream, plus the modulated pilot symbol.
pub fn generate_pilot(
    seed: u64,
    constellation: &QamConstellation,
    params: &OfdmParams,
) -> Result<(Vec<Complex64>, ComplexSignal)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits = random_bits(
        &mut rng,
        params.n_occupied * constellation.bits_per_symbol(),
    );
    let qam = qam_map(&bits, constellation)?;
    let symbol = dfts_ofdm_modulate(&qam, params)?;
    Ok((qam, symbol))
}

/// Uniform random 0/1 bits from the given stream.
pub fn random_bits(rng: &mut ChaCha8Rng, count: usize) -> Vec<u8> {
    use rand::Rng;
    (0..count).map(|_| rng.random_range(0..2u8)).collect()
}

/// Assemble a frame: one seeded pilot symbol plus the data bits mapped onto
/// `data_bits.len() / bits_per_data_symbol` DFT-s-OFDM symbols.
pub fn build_frame(
    data_bits: &[u8],
    pilot_seed: u64,
    constellation: &QamConstellation,
    params: &OfdmParams,
) -> Result<Frame> {
    let bits_per_sym = params.n_occupied * constellation.bits_per_symbol();
    if data_bits.is_empty() || !data_bits.len().is_multiple_of(bits_per_sym) {
        return Err(Error::input(format!(
            "data bit count {} must be a positive multiple of {}",
            data_bits.len(),
            bits_per_sym
        )));
    }
    let (pilot_qam, pilot_symbol) = generate_pilot(pilot_seed, constellation, params)?;
    let data_symbols = data_bits
        .chunks_exact(bits_per_sym)
        .map(|chunk| dfts_ofdm_modulate(&qam_map(chunk, constellation)?, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Frame {
        pilot_symbol,
        data_symbols,
        pilot_qam,
        tx_bits: data_bits.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const SQRT2_INV: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn small_params(n_fft: usize, n_cp: usize, n_occupied: usize) -> OfdmParams {
        OfdmParams {
            n_fft,
            subcarrier_spacing_hz: 15_000.0,
            n_cp,
            n_occupied,
        }
    }

    #[test]
    fn qam4_fixed_points() {
        let c4 = QamConstellation::qam4();
        let m = qam_map(&[0, 0, 1, 1, 0, 1, 1, 0], &c4).unwrap();
        assert!((m[0] - Complex64::new(SQRT2_INV, SQRT2_INV)).norm() < 1e-15);
        assert!((m[1] - Complex64::new(-SQRT2_INV, -SQRT2_INV)).norm() < 1e-15);
        assert!((m[2] - Complex64::new(SQRT2_INV, -SQRT2_INV)).norm() < 1e-15);
        assert!((m[3] - Complex64::new(-SQRT2_INV, SQRT2_INV)).norm() < 1e-15);
    }

    #[test]
    fn mean_energy_is_unity() {
        for c in [QamConstellation::qam4(), QamConstellation::qam16()] {
            let e: f64 = c.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / c.order as f64;
            assert!((e - 1.0).abs() < 1e-12, "order {}: energy {}", c.order, e);
        }
    }

    #[test]
    fn gray_property_nearest_neighbours() {
        for c in [QamConstellation::qam4(), QamConstellation::qam16()] {
            // Minimum point spacing = one grid step; neighbours at that
            // distance must differ in exactly one bit.
            let mut min_d = f64::INFINITY;
            for i in 0..c.order {
                for j in 0..i {
                    min_d = min_d.min((c.points[i] - c.points[j]).norm());
                }
            }
            for i in 0..c.order {
                for j in 0..i {
                    let d = (c.points[i] - c.points[j]).norm();
                    if d < min_d * 1.001 {
                        let diff: usize = c.bit_labels[i]
                            .iter()
                            .zip(c.bit_labels[j].iter())
                            .filter(|(a, b)| a != b)
                            .count();
                        assert_eq!(diff, 1, "order {}: labels {i} vs {j}", c.order);
                    }
                }
            }
        }
    }

    #[test]
    fn demap_round_trip_all_labels() {
        for c in [QamConstellation::qam4(), QamConstellation::qam16()] {
            let bps = c.bits_per_symbol();
            let mut bits = Vec::new();
            for idx in 0..c.order {
                for b in (0..bps).rev() {
                    bits.push(((idx >> b) & 1) as u8);
                }
            }
            let mapped = qam_map(&bits, &c).unwrap();
            assert_eq!(qam_demap(&mapped, &c), bits);
        }
    }

    #[test]
    fn demap_tie_break_and_nearest() {
        let c4 = QamConstellation::qam4();
        // The origin is equidistant from all points: lowest index wins.
        let bits = qam_demap(&[Complex64::new(0.0, 0.0)], &c4);
        assert_eq!(bits, c4.bit_labels[0]);
        // A point near (+1+i)/sqrt(2) demaps to 00.
        let bits = qam_demap(&[Complex64::new(0.9 * SQRT2_INV, 1.1 * SQRT2_INV)], &c4);
        assert_eq!(bits, vec![0, 0]);
    }

    #[test]
    fn qam_map_rejects_ragged_input() {
        let c16 = QamConstellation::qam16();
        assert!(matches!(
            qam_map(&[0, 1, 0], &c16),
            Err(Error::InvalidInput { .. })
        ));
    }

    #[test]
    fn fully_loaded_body_is_input_with_cp() {
        let params = small_params(16, 4, 16);
        let c4 = QamConstellation::qam4();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let bits = random_bits(&mut rng, 32);
        let qam = qam_map(&bits, &c4).unwrap();
        let sym = dfts_ofdm_modulate(&qam, &params).unwrap();
        assert_eq!(sym.len(), 20);
        for (a, b) in sym.samples[4..].iter().zip(qam.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        // CP is a copy of the tail.
        for i in 0..4 {
            assert!((sym.samples[i] - sym.samples[16 + i]).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let params = small_params(8, 2, 8);
        let zeros = vec![Complex64::new(0.0, 0.0); 8];
        let sym = dfts_ofdm_modulate(&zeros, &params).unwrap();
        assert!(sym.energy() == 0.0);
        let (subs, despread) = dfts_ofdm_demodulate(&sym, &params).unwrap();
        assert!(subs.iter().all(|v| v.norm() == 0.0));
        assert!(despread.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn subcarrier_impulse_despreads_to_exponential() {
        // A unit impulse on frequency bin k despreads to the exponential
        // e^{j 2 pi k m / M} / sqrt(M); oracle computed directly.
        let m = 12usize;
        for k in [0usize, 3, 7] {
            let mut subs = vec![Complex64::new(0.0, 0.0); m];
            subs[k] = Complex64::new(1.0, 0.0);
            let despread = subcarriers_to_qam(&subs);
            let scale = 1.0 / (m as f64).sqrt();
            for (idx, v) in despread.iter().enumerate() {
                let phase = 2.0 * std::f64::consts::PI * (k * idx) as f64 / m as f64;
                let want = Complex64::new(0.0, phase).exp() * scale;
                assert!((v - want).norm() < 1e-12, "bin {k}, sample {idx}");
            }
        }
    }

    #[test]
    fn pilot_determinism_and_seed_sensitivity() {
        let params = small_params(32, 8, 32);
        let c4 = QamConstellation::qam4();
        let (q1, s1) = generate_pilot(42, &c4, &params).unwrap();
        let (q2, s2) = generate_pilot(42, &c4, &params).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(s1.samples, s2.samples);

        for other in [43u64, 7, 1000003] {
            let (q3, _) = generate_pilot(other, &c4, &params).unwrap();
            assert!(
                q1[..16] != q3[..16],
                "seeds 42 and {other} coincide on the first 16 symbols"
            );
        }

        // Compositional definition: the pilot symbol is the modulated QAM.
        let direct = dfts_ofdm_modulate(&q1, &params).unwrap();
        assert_eq!(s1.samples, direct.samples);
    }

    #[test]
    fn frame_round_trip_identity_channel() {
        let params = small_params(64, 8, 64);
        let c4 = QamConstellation::qam4();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let bits = random_bits(&mut rng, 3 * 64 * 2);
        let frame = build_frame(&bits, 9, &c4, &params).unwrap();
        assert_eq!(frame.n_symbols(), 4);
        let mut recovered = Vec::new();
        for sym in &frame.data_symbols {
            let (_, despread) = dfts_ofdm_demodulate(sym, &params).unwrap();
            recovered.extend(qam_demap(&despread, &c4));
        }
        assert_eq!(recovered, bits);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn prop_modulate_demodulate_round_trip(
            seed in 0u64..1_000_000,
            n_fft_pow in 3u32..7,
            occupied_frac in 1usize..5,
        ) {
            let n_fft = 1usize << n_fft_pow;
            let n_occupied = (n_fft * occupied_frac / 4).max(1);
            let params = small_params(n_fft, n_fft / 4, n_occupied);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let qam: Vec<Complex64> = (0..n_occupied)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let sym = dfts_ofdm_modulate(&qam, &params).unwrap();

            // Energy conservation through the transforms (excluding CP).
            let body_energy: f64 = sym.samples[params.n_cp..].iter().map(|v| v.norm_sqr()).sum();
            let qam_energy: f64 = qam.iter().map(|v| v.norm_sqr()).sum();
            prop_assert!((body_energy - qam_energy).abs() <= 1e-10 * qam_energy.max(1e-12));

            let (_, despread) = dfts_ofdm_demodulate(&sym, &params).unwrap();
            for (a, b) in despread.iter().zip(qam.iter()) {
                prop_assert!((a - b).norm() < 1e-10);
            }
        }
    }
}
