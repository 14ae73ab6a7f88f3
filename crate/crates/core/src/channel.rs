//! The satellite downlink impairment chain.
//!
//! Stages compose in a fixed order: optional ideal pre-distortion, the
//! nonlinear amplifier, tapped-delay-line multipath with a residual Doppler
//! rotation, residual frequency offset, phase noise together with I/Q
//! imbalance, and AWGN last.
//!
//! [`propagate`] applies the chain to every symbol of a frame with the time
//! and phase reference reset at each symbol boundary, and a fresh phase-noise
//! realization per symbol. This models a receiver whose tracking loops have
//! absorbed the slow phase drift: the channel statistics are identical for
//! the pilot and every data symbol (quasi-static frame), while the
//! intra-symbol dynamics survive. Multipath tails still leak across symbol
//! boundaries by overlap-add, so inter-symbol interference is preserved.

use crate::{ComplexSignal, Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

// ---------------------------------------------------------------------------
// High power amplifier
// ---------------------------------------------------------------------------

/// AM/AM + AM/PM response of the amplifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HpaCurve {
    /// Saleh travelling-wave-tube model:
    /// `T(A) = alpha_a A / (1 + beta_a A^2)`,
    /// `phi(A) = alpha_phi A^2 / (1 + beta_phi A^2)`.
    Saleh {
        alpha_a: f64,
        beta_a: f64,
        alpha_phi: f64,
        beta_phi: f64,
    },
    /// Measured curve: rows of (input amplitude, output amplitude, output
    /// phase shift in radians), sorted by input amplitude. Linearly
    /// interpolated; clamped beyond the last row.
    Table { entries: Vec<(f64, f64, f64)> },
}

/// Amplifier model: a response curve plus input back-off in dB.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HpaModel {
    pub curve: HpaCurve,
    pub ibo_db: f64,
}

impl Default for HpaModel {
    /// Classical published Saleh TWTA parameter set, no back-off.
    fn default() -> Self {
        Self {
            curve: HpaCurve::Saleh {
                alpha_a: 2.1587,
                beta_a: 1.1517,
                alpha_phi: 4.0033,
                beta_phi: 9.1040,
            },
            ibo_db: 0.0,
        }
    }
}

impl HpaModel {
    /// Load a measured AM/AM + AM/PM table. Lines hold three whitespace
    /// separated columns (input amplitude, output amplitude, phase shift);
    /// blank lines and `#` comments are skipped.
    pub fn from_table_file(path: &Path, ibo_db: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    context: format!("{}:{}: expected 3 columns", path.display(), lineno + 1),
                });
            }
            let mut vals = [0.0f64; 3];
            for (i, c) in cols.iter().enumerate() {
                vals[i] = c.parse().map_err(|_| Error::Parse {
                    context: format!("{}:{}: bad number {c:?}", path.display(), lineno + 1),
                })?;
            }
            entries.push((vals[0], vals[1], vals[2]));
        }
        if entries.len() < 2 {
            return Err(Error::Parse {
                context: format!("{}: need at least two table rows", path.display()),
            });
        }
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Parse {
                context: format!("{}: input amplitudes must be increasing", path.display()),
            });
        }
        Ok(Self {
            curve: HpaCurve::Table { entries },
            ibo_db,
        })
    }

    pub fn ibo_factor(&self) -> f64 {
        10f64.powf(-self.ibo_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.curve {
            HpaCurve::Saleh { beta_a, .. } => {
                if !beta_a.is_finite() || *beta_a <= 0.0 {
                    return Err(Error::input(format!(
                        "Saleh beta_a must be positive for a bounded AM/AM, got {beta_a}"
                    )));
                }
            }
            HpaCurve::Table { entries } => {
                if entries.len() < 2 || entries.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::input(
                        "HPA table needs >= 2 rows with increasing input amplitudes",
                    ));
                }
            }
        }
        if !self.ibo_db.is_finite() || self.ibo_db < 0.0 {
            return Err(Error::input(format!(
                "IBO must be >= 0 dB, got {}",
                self.ibo_db
            )));
        }
        Ok(())
    }

    /// AM/AM response `T(A)`.
    pub fn am_am(&self, a: f64) -> f64 {
        match &self.curve {
            HpaCurve::Saleh {
                alpha_a, beta_a, ..
            } => alpha_a * a / (1.0 + beta_a * a * a),
            HpaCurve::Table { entries } => Self::interp(entries, a).0,
        }
    }

    /// AM/PM response `phi(A)` in radians.
    pub fn am_pm(&self, a: f64) -> f64 {
        match &self.curve {
            HpaCurve::Saleh {
                alpha_phi,
                beta_phi,
                ..
            } => alpha_phi * a * a / (1.0 + beta_phi * a * a),
            HpaCurve::Table { entries } => Self::interp(entries, a).1,
        }
    }

    fn interp(entries: &[(f64, f64, f64)], a: f64) -> (f64, f64) {
        let first = entries[0];
        if a <= first.0 {
            // Linear from the origin in amplitude, constant phase shift.
            let frac = if first.0 > 0.0 { a / first.0 } else { 0.0 };
            return (first.1 * frac, first.2);
        }
        let last = entries[entries.len() - 1];
        if a >= last.0 {
            return (last.1, last.2);
        }
        let hi = entries.partition_point(|e| e.0 < a);
        let (a0, t0, p0) = entries[hi - 1];
        let (a1, t1, p1) = entries[hi];
        let w = (a - a0) / (a1 - a0);
        (t0 + w * (t1 - t0), p0 + w * (p1 - p0))
    }

    /// Input amplitude and output amplitude at the AM/AM maximum.
    pub fn saturation(&self) -> (f64, f64) {
        match &self.curve {
            HpaCurve::Saleh {
                alpha_a, beta_a, ..
            } => {
                let a_in = 1.0 / beta_a.sqrt();
                (a_in, alpha_a / (2.0 * beta_a.sqrt()))
            }
            HpaCurve::Table { entries } => entries
                .iter()
                .map(|&(a, t, _)| (a, t))
                .fold((0.0, 0.0), |acc, e| if e.1 > acc.1 { e } else { acc }),
        }
    }

    /// Gain of the linearized amplifier: saturation output over saturation
    /// input. For the Saleh curve this is `alpha_a / 2`.
    pub fn linear_gain(&self) -> f64 {
        let (a_in, t_max) = self.saturation();
        if a_in > 0.0 {
            t_max / a_in
        } else {
            1.0
        }
    }

    /// Amplitude that drives the AM/AM response to `target` (below
    /// saturation). Saleh inverts algebraically; tables by bisection.
    fn invert_am(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        let (sat_in, sat_out) = self.saturation();
        if target >= sat_out {
            return sat_in;
        }
        match &self.curve {
            HpaCurve::Saleh {
                alpha_a, beta_a, ..
            } => {
                let disc = alpha_a * alpha_a - 4.0 * beta_a * target * target;
                (alpha_a - disc.max(0.0).sqrt()) / (2.0 * beta_a * target)
            }
            HpaCurve::Table { .. } => {
                let (mut lo, mut hi) = (0.0, sat_in);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.am_am(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Memoryless nonlinear amplification: IBO scaling, then per sample
/// `A e^{j theta} -> T(A) e^{j (theta + phi(A))}`.
pub fn hpa_apply(sig: &ComplexSignal, model: &HpaModel) -> ComplexSignal {
    let k = model.ibo_factor();
    sig.map(|x| {
        let driven = x * k;
        let a = driven.norm();
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let t = model.am_am(a);
        let phase = driven.arg() + model.am_pm(a);
        Complex64::from_polar(t, phase)
    })
}

/// Ideal pre-distortion: after [`hpa_apply`], the composition is an exactly
/// linear amplifier of gain `ibo_factor * linear_gain` for samples whose
/// target output stays below the AM/AM maximum; beyond that the output
/// amplitude clips to the maximum with the phase fully compensated.
pub fn ideal_predistort(sig: &ComplexSignal, model: &HpaModel) -> ComplexSignal {
    let k = model.ibo_factor();
    let g = model.linear_gain();
    sig.map(|x| {
        let a = x.norm();
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        // Target output of the linearized amplifier at this drive level.
        let target = g * k * a;
        let drive = model.invert_am(target);
        let phase = x.arg() - model.am_pm(drive);
        Complex64::from_polar(drive / k, phase)
    })
}

// ---------------------------------------------------------------------------
// Doppler geometry
// ---------------------------------------------------------------------------

/// Which form of the elevation factor `eta(theta_max)` to evaluate.
///
/// The two published variants differ in the arccosine argument:
/// `Printed` uses `acos((r_e/r_o) * theta_max)`, which is undefined for
/// near-overhead passes, while `Geometric` uses
/// `acos((r_e/r_o) * cos(theta_max))`, the closed-form of the pass geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaForm {
    Printed,
    #[default]
    Geometric,
}

/// Orbit and carrier geometry for the time-varying Doppler shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DopplerParams {
    pub f_c_hz: f64,
    pub w_s_rad_per_s: f64,
    pub theta_max_rad: f64,
    pub r_o_m: f64,
    pub r_e_m: f64,
    pub c_m_per_s: f64,
    pub eta_form: EtaForm,
}

impl Default for DopplerParams {
    /// 800 km LEO at S-band (2 GHz), 7.61 km/s tangential velocity,
    /// overhead pass.
    fn default() -> Self {
        let r_e = 6_371_000.0;
        let r_o = r_e + 800_000.0;
        Self {
            f_c_hz: 2.0e9,
            w_s_rad_per_s: 7_610.0 / r_o,
            theta_max_rad: PI / 2.0,
            r_o_m: r_o,
            r_e_m: r_e,
            c_m_per_s: 299_792_458.0,
            eta_form: EtaForm::Geometric,
        }
    }
}

impl DopplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_o_m > self.r_e_m && self.r_e_m > 0.0) {
            return Err(Error::input("orbit radius must exceed Earth radius > 0"));
        }
        if self.w_s_rad_per_s <= 0.0 {
            return Err(Error::input("angular velocity must be positive"));
        }
        if !(self.theta_max_rad > 0.0 && self.theta_max_rad <= PI / 2.0 + 1e-12) {
            return Err(Error::input("theta_max must lie in (0, pi/2]"));
        }
        Ok(())
    }

    fn eta(&self) -> Result<f64> {
        let ratio = self.r_e_m / self.r_o_m;
        let arg = match self.eta_form {
            EtaForm::Printed => ratio * self.theta_max_rad,
            EtaForm::Geometric => ratio * self.theta_max_rad.cos(),
        };
        if !(-1.0..=1.0).contains(&arg) {
            return Err(Error::domain(format!(
                "eta arccosine argument {arg:.6} outside [-1, 1]"
            )));
        }
        Ok((arg.acos() - self.theta_max_rad).cos())
    }
}

/// Time-varying Doppler shift of a satellite pass, `t = 0` at closest
/// approach.
pub fn doppler_shift_at(t: f64, p: &DopplerParams) -> Result<f64> {
    p.validate()?;
    let eta = p.eta()?;
    let wst = p.w_s_rad_per_s * t;
    let denom_sq =
        p.r_e_m * p.r_e_m + p.r_o_m * p.r_o_m - 2.0 * p.r_e_m * p.r_o_m * wst.cos() * eta;
    if denom_sq <= 0.0 {
        return Err(Error::domain(format!(
            "nonpositive square-root argument {denom_sq:.3}"
        )));
    }
    Ok(
        -(p.f_c_hz * p.w_s_rad_per_s * p.r_e_m * p.r_o_m * wst.sin() * eta)
            / (p.c_m_per_s * denom_sq.sqrt()),
    )
}

/// Maximum |Doppler shift| over `t` in `[-t_max, t_max]`, by dense grid
/// search (the shift is smooth and single-peaked per half pass).
pub fn max_abs_doppler(p: &DopplerParams, t_max: f64, grid: usize) -> Result<f64> {
    if t_max <= 0.0 || grid < 2 {
        return Err(Error::input("t_max must be positive and grid >= 2"));
    }
    let mut best = 0.0f64;
    for i in 0..=grid {
        let t = -t_max + 2.0 * t_max * i as f64 / grid as f64;
        best = best.max(doppler_shift_at(t, p)?.abs());
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Tapped delay line
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TdlTap {
    pub delay_samples: usize,
    pub gain: Complex64,
    pub extra_doppler_hz: f64,
}

/// Discrete multipath profile plus the carrier terms of the channel phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TdlProfile {
    pub taps: Vec<TdlTap>,
    /// sigma_0: up-converter oscillator phase offset in radians.
    pub carrier_offset_phase: f64,
    /// f_0: carrier term of the per-tap phase. Zero in baseband simulation.
    pub carrier_freq_hz: f64,
}

impl Default for TdlProfile {
    fn default() -> Self {
        Self {
            taps: vec![TdlTap {
                delay_samples: 0,
                gain: Complex64::new(1.0, 0.0),
                extra_doppler_hz: 0.0,
            }],
            carrier_offset_phase: 0.0,
            carrier_freq_hz: 0.0,
        }
    }
}

impl TdlProfile {
    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::input("TDL profile needs at least one tap"));
        }
        if self
            .taps
            .windows(2)
            .any(|w| w[1].delay_samples < w[0].delay_samples)
        {
            return Err(Error::input("TDL tap delays must be nondecreasing"));
        }
        Ok(())
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }

    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|t| t.delay_samples).max().unwrap_or(0)
    }

    /// RMS delay spread of the discrete power profile, in samples.
    pub fn rms_delay_spread_samples(&self) -> f64 {
        let total = self.total_power();
        if total == 0.0 {
            return 0.0;
        }
        let mean: f64 = self
            .taps
            .iter()
            .map(|t| t.gain.norm_sqr() * t.delay_samples as f64)
            .sum::<f64>()
            / total;
        let second: f64 = self
            .taps
            .iter()
            .map(|t| t.gain.norm_sqr() * (t.delay_samples as f64).powi(2))
            .sum::<f64>()
            / total;
        (second - mean * mean).max(0.0).sqrt()
    }

    /// Deterministic profile for a requested RMS delay spread.
    ///
    /// Sub-sample continuous delays cannot be represented at the simulation
    /// rate, so taps sit on consecutive whole samples with a geometric power
    /// decay `p_k ~ q^k`; `q` is solved by bisection so the discrete RMS
    /// delay spread matches the request. The tap count grows with the spread
    /// (`ceil(4 sigma) + 1`, at least `min_taps`) so the target stays
    /// reachable. Gains are real positive with total power one; a decay of
    /// one half reproduces the default 0/-3/-6 dB three-tap shape.
    pub fn from_delay_spread(rms_ns: f64, sample_rate_hz: f64, min_taps: usize) -> Result<Self> {
        if rms_ns < 0.0 || !rms_ns.is_finite() {
            return Err(Error::input(format!("bad delay spread {rms_ns} ns")));
        }
        if sample_rate_hz <= 0.0 {
            return Err(Error::input("sample rate must be positive"));
        }
        let min_taps = min_taps.max(1);
        let sigma = rms_ns * 1e-9 * sample_rate_hz;
        if sigma < 1e-9 {
            let mut taps = vec![TdlTap {
                delay_samples: 0,
                gain: Complex64::new(1.0, 0.0),
                extra_doppler_hz: 0.0,
            }];
            // Keep the configured tap count; excess taps carry zero power.
            for k in 1..min_taps {
                taps.push(TdlTap {
                    delay_samples: k,
                    gain: Complex64::new(0.0, 0.0),
                    extra_doppler_hz: 0.0,
                });
            }
            return Ok(Self {
                taps,
                ..Self::default()
            });
        }

        let k = min_taps.max((4.0 * sigma).ceil() as usize + 1);
        let spread_for = |q: f64| -> f64 {
            let powers: Vec<f64> = (0..k).map(|i| q.powi(i as i32)).collect();
            let total: f64 = powers.iter().sum();
            let mean: f64 = powers
                .iter()
                .enumerate()
                .map(|(i, p)| i as f64 * p)
                .sum::<f64>()
                / total;
            let second: f64 = powers
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64).powi(2) * p)
                .sum::<f64>()
                / total;
            (second - mean * mean).max(0.0).sqrt()
        };
        if sigma > spread_for(1.0) {
            return Err(Error::input(format!(
                "delay spread {rms_ns} ns unreachable with {k} whole-sample taps"
            )));
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if spread_for(mid) < sigma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = 0.5 * (lo + hi);
        let powers: Vec<f64> = (0..k).map(|i| q.powi(i as i32)).collect();
        let total: f64 = powers.iter().sum();
        let taps = powers
            .iter()
            .enumerate()
            .map(|(i, p)| TdlTap {
                delay_samples: i,
                gain: Complex64::new((p / total).sqrt(), 0.0),
                extra_doppler_hz: 0.0,
            })
            .collect();
        Ok(Self {
            taps,
            ..Self::default()
        })
    }

    /// New profile with every tap gain rotated by an independent uniform
    /// phase: one channel realization. Draws one phase per tap, in order.
    pub fn randomize_phases(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut out = self.clone();
        for tap in &mut out.taps {
            let phase = rng.random_range(0.0..2.0 * PI);
            tap.gain *= Complex64::from_polar(1.0, phase);
        }
        out
    }
}

/// Tapped-delay-line channel with a constant Doppler shift: the per-tap
/// contribution is `h_i v[n - d_i] exp(j(-2 pi (f_0 + f_d)(n - d_i)/fs + sigma_0))`.
/// The full convolution tail is kept, so the output is longer than the
/// input by the maximum delay.
pub fn tdl_apply(sig: &ComplexSignal, profile: &TdlProfile, fd_hz: f64) -> Result<ComplexSignal> {
    tdl_apply_with(sig, profile, &|_| fd_hz)
}

/// As [`tdl_apply`] but with a time-varying Doppler shift `fd_at(t)`.
pub fn tdl_apply_with(
    sig: &ComplexSignal,
    profile: &TdlProfile,
    fd_at: &dyn Fn(f64) -> f64,
) -> Result<ComplexSignal> {
    profile.validate()?;
    let fs = sig.sample_rate_hz;
    if fs <= 0.0 {
        return Err(Error::input("sample rate must be positive"));
    }
    let max_delay = profile.max_delay();
    if !sig.is_empty() && max_delay >= sig.len() {
        return Err(Error::input(format!(
            "tap delay {} not below signal length {}",
            max_delay,
            sig.len()
        )));
    }
    let out_len = sig.len() + max_delay;
    let mut out = vec![Complex64::new(0.0, 0.0); out_len];
    for tap in &profile.taps {
        if tap.gain.norm_sqr() == 0.0 {
            continue;
        }
        for (m, &v) in sig.samples.iter().enumerate() {
            let n = m + tap.delay_samples;
            let t_delayed = m as f64 / fs; // (t - tau_i) at output sample n
            let f_total = profile.carrier_freq_hz + fd_at(n as f64 / fs) + tap.extra_doppler_hz;
            let phase = -2.0 * PI * f_total * t_delayed + profile.carrier_offset_phase;
            out[n] += tap.gain * v * Complex64::from_polar(1.0, phase);
        }
    }
    Ok(ComplexSignal::new(out, fs))
}

// ---------------------------------------------------------------------------
// Frequency offset, phase noise, I/Q imbalance, AWGN
// ---------------------------------------------------------------------------

/// Residual frequency offset: sample `n` rotates by `e^{-j 2 pi eps n / fs}`.
pub fn freq_offset_apply(sig: &ComplexSignal, epsilon_hz: f64) -> ComplexSignal {
    let fs = sig.sample_rate_hz;
    let samples = sig
        .samples
        .iter()
        .enumerate()
        .map(|(n, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * epsilon_hz * n as f64 / fs))
        .collect();
    ComplexSignal::new(samples, fs)
}

/// One point of a one-sided phase-noise mask.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MaskPoint {
    pub offset_hz: f64,
    pub dbc_per_hz: f64,
}

/// Generic S-band-like oscillator mask used as the configurable default.
pub fn default_phase_noise_mask() -> Vec<MaskPoint> {
    [
        (100.0, -30.0),
        (1_000.0, -60.0),
        (10_000.0, -75.0),
        (100_000.0, -90.0),
        (1_000_000.0, -96.0),
    ]
    .iter()
    .map(|&(offset_hz, dbc_per_hz)| MaskPoint {
        offset_hz,
        dbc_per_hz,
    })
    .collect()
}

fn mask_psd_db(mask: &[MaskPoint], f: f64) -> f64 {
    let first = mask[0];
    if f <= first.offset_hz {
        return first.dbc_per_hz;
    }
    let last = mask[mask.len() - 1];
    if f >= last.offset_hz {
        return last.dbc_per_hz;
    }
    let hi = mask.partition_point(|p| p.offset_hz < f);
    let (a, b) = (mask[hi - 1], mask[hi]);
    // Piecewise linear in (log10 f, dB).
    let w = (f.log10() - a.offset_hz.log10()) / (b.offset_hz.log10() - a.offset_hz.log10());
    a.dbc_per_hz + w * (b.dbc_per_hz - a.dbc_per_hz)
}

/// Gaussian phase-noise sample path whose one-sided PSD follows the
/// piecewise log-linear mask. Synthesized in the frequency domain: each
/// positive bin gets an independent complex Gaussian with variance
/// `S(f_k) * fs / 2`, mirrored Hermitian, inverse transformed. The DC bin is
/// zero (a constant phase offset belongs to the channel's `sigma_0`).
/// Bins are drawn in ascending order, two standard normals per bin.
pub fn phase_noise_process(
    mask: &[MaskPoint],
    n: usize,
    sample_rate_hz: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(Error::input("phase-noise mask must be nonempty"));
    }
    if mask.windows(2).any(|w| w[1].offset_hz <= w[0].offset_hz) {
        return Err(Error::input("mask offsets must be strictly increasing"));
    }
    if mask
        .iter()
        .any(|p| p.offset_hz <= 0.0 || !p.dbc_per_hz.is_finite())
    {
        return Err(Error::input(
            "mask points must have positive offsets and finite levels",
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if sample_rate_hz <= 0.0 {
        return Err(Error::input("sample rate must be positive"));
    }

    let df = sample_rate_hz / n as f64;
    let normal = StandardNormal;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 * df;
        let s_lin = 10f64.powf(mask_psd_db(mask, f) / 10.0);
        let var = s_lin * sample_rate_hz / 2.0;
        let g1: f64 = normal.sample(rng);
        let g2: f64 = normal.sample(rng);
        if k == n - k {
            // Nyquist bin is self-conjugate: real draw.
            spectrum[k] = Complex64::new(var.sqrt() * g1, 0.0);
        } else {
            let amp = (var / 2.0).sqrt();
            spectrum[k] = Complex64::new(amp * g1, amp * g2);
            spectrum[n - k] = spectrum[k].conj();
        }
    }
    Ok(crate::fft::inverse(&spectrum)
        .iter()
        .map(|v| v.re)
        .collect())
}

/// I/Q imbalance and multiplicative phase noise, applied per sample with
/// in-phase/quadrature parts `(x_I, x_Q)`:
///
/// ```text
/// out = [ (1 + eta_a)(x_I cos(eta_phi/2) - x_Q sin(eta_phi/2))
///       + j(1 - eta_a)(x_Q cos(eta_phi/2) - x_I sin(eta_phi/2)) ] e^{j phi}
/// ```
pub fn iq_phase_noise_apply(
    sig: &ComplexSignal,
    eta_a: f64,
    eta_phi: f64,
    phi: &[f64],
) -> Result<ComplexSignal> {
    if phi.len() != sig.len() {
        return Err(Error::dim(format!(
            "phase vector length {} != signal length {}",
            phi.len(),
            sig.len()
        )));
    }
    let (c, s) = ((eta_phi / 2.0).cos(), (eta_phi / 2.0).sin());
    let samples = sig
        .samples
        .iter()
        .zip(phi.iter())
        .map(|(&x, &p)| {
            let i_out = (1.0 + eta_a) * (x.re * c - x.im * s);
            let q_out = (1.0 - eta_a) * (x.im * c - x.re * s);
            Complex64::new(i_out, q_out) * Complex64::from_polar(1.0, p)
        })
        .collect();
    Ok(ComplexSignal::new(samples, sig.sample_rate_hz))
}

/// Circular complex Gaussian noise with the given per-sample variance.
/// Two standard normals per sample, in sample order.
pub fn add_noise(sig: &ComplexSignal, variance: f64, rng: &mut ChaCha8Rng) -> ComplexSignal {
    let normal = StandardNormal;
    let amp = (variance / 2.0).sqrt();
    let samples = sig
        .samples
        .iter()
        .map(|&x| {
            let g1: f64 = normal.sample(rng);
            let g2: f64 = normal.sample(rng);
            x + Complex64::new(amp * g1, amp * g2)
        })
        .collect();
    ComplexSignal::new(samples, sig.sample_rate_hz)
}

/// AWGN at a requested SNR relative to the measured signal power.
pub fn awgn_apply(sig: &ComplexSignal, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<ComplexSignal> {
    let power = sig.power();
    if power <= 0.0 {
        return Err(Error::input(
            "awgn_apply requires a signal with positive power",
        ));
    }
    let variance = power / 10f64.powf(snr_db / 10.0);
    Ok(add_noise(sig, variance, rng))
}

// ---------------------------------------------------------------------------
// Impairment configuration and the composed chain
// ---------------------------------------------------------------------------

/// How the multipath profile is specified.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TdlSpec {
    /// Generated by [`TdlProfile::from_delay_spread`] at the waveform's
    /// sample rate.
    DelaySpread { rms_ns: f64, min_taps: usize },
    /// A fully specified profile.
    Explicit { profile: TdlProfile },
}

impl TdlSpec {
    pub fn resolve(&self, sample_rate_hz: f64) -> Result<TdlProfile> {
        match self {
            TdlSpec::DelaySpread { rms_ns, min_taps } => {
                TdlProfile::from_delay_spread(*rms_ns, sample_rate_hz, *min_taps)
            }
            TdlSpec::Explicit { profile } => {
                profile.validate()?;
                Ok(profile.clone())
            }
        }
    }

    /// Tap count the resolved profile will have (receiver input width).
    pub fn n_taps(&self, sample_rate_hz: f64) -> Result<usize> {
        Ok(self.resolve(sample_rate_hz)?.taps.len())
    }
}

/// The four baseline conditions of the traditional receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
            CaseId::Case4 => "case4",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(CaseId::Case1),
            "case2" => Ok(CaseId::Case2),
            "case3" => Ok(CaseId::Case3),
            "case4" => Ok(CaseId::Case4),
            other => Err(Error::input(format!("unknown case id {other:?}"))),
        }
    }
}

/// Every impairment parameter plus per-stage enable flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentConfig {
    pub hpa: HpaModel,
    pub hpa_enabled: bool,
    pub ideal_predistortion: bool,
    pub tdl: TdlSpec,
    pub tdl_enabled: bool,
    /// Residual Doppler after coarse correction; the constant shift inside
    /// the TDL stage.
    pub residual_doppler_hz: f64,
    /// Residual frequency offset epsilon of the dedicated rotation stage.
    pub residual_offset_hz: f64,
    pub phase_noise_mask: Vec<MaskPoint>,
    pub phase_noise_enabled: bool,
    pub eta_a: f64,
    /// Full quadrature mixing angle of the imbalance stage; the oscillator
    /// phase imbalance is half this angle (the default realizes a 1.39 rad
    /// imbalance).
    pub eta_phi: f64,
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            hpa: HpaModel::default(),
            hpa_enabled: true,
            ideal_predistortion: false,
            tdl: TdlSpec::DelaySpread {
                rms_ns: 10.0,
                min_taps: 3,
            },
            tdl_enabled: true,
            residual_doppler_hz: 1000.0,
            residual_offset_hz: 0.0,
            phase_noise_mask: default_phase_noise_mask(),
            phase_noise_enabled: true,
            eta_a: 0.0,
            eta_phi: 2.78,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

impl ImpairmentConfig {
    /// The configuration a baseline receiver faces under the given case:
    ///
    /// * case 1 — raw amplifier, all impairments;
    /// * case 2 — ideal pre-distortion, all impairments;
    /// * case 3 — pre-distortion, impropriety sources (I/Q imbalance and
    ///   phase noise) removed;
    /// * case 4 — AWGN only.
    pub fn for_case(&self, case: CaseId) -> Self {
        let mut cfg = self.clone();
        match case {
            CaseId::Case1 => {
                cfg.ideal_predistortion = false;
            }
            CaseId::Case2 => {
                cfg.ideal_predistortion = true;
            }
            CaseId::Case3 => {
                cfg.ideal_predistortion = true;
                cfg.eta_a = 0.0;
                cfg.eta_phi = 0.0;
                cfg.phase_noise_enabled = false;
            }
            CaseId::Case4 => {
                cfg.ideal_predistortion = true;
                cfg.hpa_enabled = false;
                cfg.tdl_enabled = false;
                cfg.residual_doppler_hz = 0.0;
                cfg.residual_offset_hz = 0.0;
                cfg.eta_a = 0.0;
                cfg.eta_phi = 0.0;
                cfg.phase_noise_enabled = false;
            }
        }
        cfg
    }
}

/// Apply the enabled impairment stages to every symbol of a frame.
///
/// Per-symbol semantics: the time and phase reference of the Doppler,
/// frequency-offset, and phase-noise stages restarts at each symbol, and the
/// phase-noise realization is drawn fresh per symbol. One set of random tap
/// phases is drawn per frame (quasi-static channel). Multipath convolution
/// tails are overlap-added into the next symbol. AWGN is added last with the
/// variance referenced to the mean impaired-signal power over the frame.
///
/// Randomness order (one ChaCha stream from `cfg.seed`): tap phases, then
/// per symbol the phase-noise bins, then per symbol the noise samples.
pub fn propagate(
    frame: &crate::waveform::Frame,
    cfg: &ImpairmentConfig,
) -> Result<crate::waveform::Frame> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let fs = frame.pilot_symbol.sample_rate_hz;
    if cfg.hpa_enabled {
        cfg.hpa.validate()?;
    }
    let profile = if cfg.tdl_enabled {
        let base = cfg.tdl.resolve(fs)?;
        Some(base.randomize_phases(&mut rng))
    } else {
        None
    };

    let mut symbols: Vec<&ComplexSignal> = vec![&frame.pilot_symbol];
    symbols.extend(frame.data_symbols.iter());

    let mut propagated: Vec<ComplexSignal> = Vec::with_capacity(symbols.len());
    let mut pending_tail: Vec<Complex64> = Vec::new();
    for sym in symbols {
        let mut sig = (*sym).clone();
        if cfg.hpa_enabled {
            if cfg.ideal_predistortion {
                sig = ideal_predistort(&sig, &cfg.hpa);
            }
            sig = hpa_apply(&sig, &cfg.hpa);
        }
        if let Some(profile) = &profile {
            let full = tdl_apply(&sig, profile, cfg.residual_doppler_hz)?;
            let sym_len = sig.len();
            let mut body: Vec<Complex64> = full.samples[..sym_len].to_vec();
            for (i, &tail) in pending_tail.iter().enumerate() {
                if i < body.len() {
                    body[i] += tail;
                }
            }
            pending_tail = full.samples[sym_len..].to_vec();
            sig = ComplexSignal::new(body, fs);
        }
        if cfg.residual_offset_hz != 0.0 {
            sig = freq_offset_apply(&sig, cfg.residual_offset_hz);
        }
        let phi = if cfg.phase_noise_enabled {
            phase_noise_process(&cfg.phase_noise_mask, sig.len(), fs, &mut rng)?
        } else {
            vec![0.0; sig.len()]
        };
        sig = iq_phase_noise_apply(&sig, cfg.eta_a, cfg.eta_phi, &phi)?;
        propagated.push(sig);
    }

    let total_energy: f64 = propagated.iter().map(|s| s.energy()).sum();
    let total_len: usize = propagated.iter().map(|s| s.len()).sum();
    if total_energy <= 0.0 || total_len == 0 {
        return Err(Error::input("propagated frame has no power before AWGN"));
    }
    let variance = (total_energy / total_len as f64) / 10f64.powf(cfg.snr_db / 10.0);
    let noisy: Vec<ComplexSignal> = propagated
        .iter()
        .map(|s| add_noise(s, variance, &mut rng))
        .collect();

    let mut out_syms = noisy;
    let pilot = out_syms.remove(0);
    Ok(crate::waveform::Frame {
        pilot_symbol: pilot,
        data_symbols: out_syms,
        pilot_qam: frame.pilot_qam.clone(),
        tx_bits: frame.tx_bits.clone(),
    })
}
