//! Monte-Carlo experiment harness: configuration, deterministic seeding,
//! per-frame trials, sweep aggregation, BER/impropriety/FLOP metrics, and
//! CSV/JSON export.
//!
//! Reproducibility contract: a configuration plus the master seed determine
//! every output byte (the JSON export carries a wall-clock timestamp in its
//! metadata field; the CSV carries none). Per-trial seeds are derived up
//! front with a fixed SplitMix64-style hash, so trials can run concurrently
//! and aggregate by commutative summation of error counts.

use crate::channel::{self, CaseId, ImpairmentConfig};
use crate::numerics::CVector;
use crate::receivers::{self, MlVariant, TrainedNetwork};
use crate::waveform::{self, OfdmParams, QamConstellation};
use crate::{ComplexSignal, Error, Result};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// All receivers the harness can run at a sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverKind {
    Ls,
    Mmse,
    Elm,
    Celm,
    Celmah,
    CelmWlls,
}

impl ReceiverKind {
    pub fn is_ml(self) -> bool {
        !matches!(self, ReceiverKind::Ls | ReceiverKind::Mmse)
    }

    fn ml_variant(self) -> Option<MlVariant> {
        match self {
            ReceiverKind::Elm => Some(MlVariant::Elm),
            ReceiverKind::Celm => Some(MlVariant::Celm),
            ReceiverKind::Celmah => Some(MlVariant::Celmah),
            ReceiverKind::CelmWlls => Some(MlVariant::CelmWlls),
            _ => None,
        }
    }

    pub fn all() -> [ReceiverKind; 6] {
        [
            ReceiverKind::Ls,
            ReceiverKind::Mmse,
            ReceiverKind::Elm,
            ReceiverKind::Celm,
            ReceiverKind::Celmah,
            ReceiverKind::CelmWlls,
        ]
    }
}

impl std::fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ReceiverKind::Ls => "ls",
            ReceiverKind::Mmse => "mmse",
            ReceiverKind::Elm => "elm",
            ReceiverKind::Celm => "celm",
            ReceiverKind::Celmah => "celmah",
            ReceiverKind::CelmWlls => "celm_wlls",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ReceiverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(ReceiverKind::Ls),
            "mmse" => Ok(ReceiverKind::Mmse),
            "elm" => Ok(ReceiverKind::Elm),
            "celm" => Ok(ReceiverKind::Celm),
            "celmah" => Ok(ReceiverKind::Celmah),
            "celm_wlls" => Ok(ReceiverKind::CelmWlls),
            other => Err(Error::input(format!("unknown receiver {other:?}"))),
        }
    }
}

fn default_hidden_nodes() -> usize {
    receivers::DEFAULT_HIDDEN_NODES
}

fn default_theta() -> f64 {
    receivers::DEFAULT_INIT_VARIANCE
}

fn default_smoothing() -> usize {
    64
}

/// One receiver entry of an experiment, with its own parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReceiverSpec {
    pub kind: ReceiverKind,
    /// Hidden nodes L of the ML receivers.
    #[serde(default = "default_hidden_nodes")]
    pub hidden_nodes: usize,
    /// Input weight init variance theta.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Tap-window width I; `None` follows the channel profile's tap count.
    #[serde(default)]
    pub taps: Option<usize>,
    /// Ridge of the WLLS solver.
    #[serde(default)]
    pub ridge: f64,
    /// Channel-estimate smoothing window (bins) of the LS/MMSE baselines.
    #[serde(default = "default_smoothing")]
    pub smoothing_window: usize,
}

impl ReceiverSpec {
    pub fn new(kind: ReceiverKind) -> Self {
        Self {
            kind,
            hidden_nodes: default_hidden_nodes(),
            theta: default_theta(),
            taps: None,
            ridge: 0.0,
            smoothing_window: default_smoothing(),
        }
    }
}

fn default_data_symbols() -> usize {
    13
}

fn default_qam_order() -> usize {
    4
}

/// Waveform numerology plus constellation order and frame length.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveformConfig {
    pub params: OfdmParams,
    pub qam_order: usize,
    /// Data symbols per frame; one pilot plus 13 data symbols is about 1 ms
    /// at 15 kHz spacing.
    pub data_symbols: usize,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            params: OfdmParams::default(),
            qam_order: default_qam_order(),
            data_symbols: default_data_symbols(),
        }
    }
}

/// Which impairment parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SnrDb,
    DelaySpreadNs,
    EtaPhi,
    DopplerHz,
    IboDb,
}

impl std::fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::DelaySpreadNs => "delay_spread_ns",
            SweepVariable::EtaPhi => "eta_phi",
            SweepVariable::DopplerHz => "doppler_hz",
            SweepVariable::IboDb => "ibo_db",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// A full experiment: waveform, channel, receiver set, baseline case, sweep
/// axis, and Monte-Carlo depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub waveform: WaveformConfig,
    pub channel: ImpairmentConfig,
    pub receivers: Vec<ReceiverSpec>,
    /// Baseline condition applied to the LS/MMSE receivers. ML receivers
    /// always face the raw case-1 channel.
    pub case_id: CaseId,
    pub sweep: SweepSpec,
    /// SNR used when the sweep variable is not SNR.
    pub fixed_snr_db: f64,
    pub n_frames: usize,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            waveform: WaveformConfig::default(),
            channel: ImpairmentConfig::default(),
            receivers: ReceiverKind::all().map(ReceiverSpec::new).to_vec(),
            case_id: CaseId::Case1,
            sweep: SweepSpec {
                variable: SweepVariable::SnrDb,
                values: (0..=7).map(|i| 2.0 * i as f64).collect(),
            },
            fixed_snr_db: 10.0,
            n_frames: 200,
            master_seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.waveform.params.validate()?;
        QamConstellation::for_order(self.waveform.qam_order)?;
        if self.waveform.data_symbols == 0 {
            return Err(Error::input("need at least one data symbol per frame"));
        }
        if self.receivers.is_empty() {
            return Err(Error::input("receiver list must be nonempty"));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::input("sweep value list must be nonempty"));
        }
        if self.sweep.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("sweep values must be strictly increasing"));
        }
        if self.n_frames == 0 {
            return Err(Error::input("n_frames must be >= 1"));
        }
        Ok(())
    }

    /// The channel configuration at one sweep point (before case toggling
    /// and seeding).
    pub fn channel_at(&self, sweep_value: f64) -> ImpairmentConfig {
        let mut ch = self.channel.clone();
        ch.snr_db = self.fixed_snr_db;
        match self.sweep.variable {
            SweepVariable::SnrDb => ch.snr_db = sweep_value,
            SweepVariable::DelaySpreadNs => {
                let min_taps = match ch.tdl {
                    channel::TdlSpec::DelaySpread { min_taps, .. } => min_taps,
                    channel::TdlSpec::Explicit { .. } => 3,
                };
                ch.tdl = channel::TdlSpec::DelaySpread {
                    rms_ns: sweep_value,
                    min_taps,
                };
            }
            SweepVariable::EtaPhi => ch.eta_phi = sweep_value,
            SweepVariable::DopplerHz => ch.residual_doppler_hz = sweep_value,
            SweepVariable::IboDb => ch.hpa.ibo_db = sweep_value,
        }
        ch
    }
}

// ---------------------------------------------------------------------------
// Deterministic seeding
// ---------------------------------------------------------------------------

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation: `splitmix(splitmix(splitmix(master) ^ a) ^ b)`
/// with the SplitMix64 finalizer. Used as
/// `derive_seed(master_seed, sweep_index, frame_index)` for trials and with
/// fixed stream tags below for the per-trial substreams.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ a) ^ b)
}

/// Per-trial substreams, used as `derive_seed(trial_seed, STREAM_*, 0)`.
pub const STREAM_DATA_BITS: u64 = 0xD0;
pub const STREAM_PILOT: u64 = 0xD1;
pub const STREAM_CHANNEL_ML: u64 = 0xD2;
pub const STREAM_CHANNEL_TRAD: u64 = 0xD3;
pub const STREAM_NETWORK: u64 = 0xD4;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of differing bit positions.
pub fn ber(tx_bits: &[u8], rx_bits: &[u8]) -> Result<f64> {
    if tx_bits.len() != rx_bits.len() {
        return Err(Error::dim(format!(
            "bit streams disagree: {} vs {}",
            tx_bits.len(),
            rx_bits.len()
        )));
    }
    if tx_bits.is_empty() {
        return Err(Error::input("ber of empty streams"));
    }
    let errors = tx_bits
        .iter()
        .zip(rx_bits.iter())
        .filter(|(a, b)| a != b)
        .count();
    Ok(errors as f64 / tx_bits.len() as f64)
}

/// Scalar circularity measure `|sum z^2| / sum |z|^2` in [0, 1]: zero for
/// proper signals, one for real-valued ones.
pub fn impropriety_coefficient(sig: &ComplexSignal) -> Result<f64> {
    if sig.is_empty() {
        return Err(Error::input("impropriety of an empty signal"));
    }
    let den: f64 = sig.samples.iter().map(|z| z.norm_sqr()).sum();
    if den <= 0.0 {
        return Err(Error::input("impropriety of a zero-power signal"));
    }
    let num: Complex64 = sig.samples.iter().map(|z| z * z).sum();
    Ok(num.norm() / den)
}

// ---------------------------------------------------------------------------
// FLOP model
// ---------------------------------------------------------------------------
//
// Counting convention (real FLOPs):
//   complex multiply-add        8
//   complex add / subtract      2
//   complex division           16
//   activation evaluation      16
//   real multiply-add           2
//   FFT of length n            5 n log2(n)
//
// Per-receiver ledger, covering one pilot training plus the equalization of
// one data symbol (reception through symbol estimation):
//   hidden layer               8 N L I + 16 N L        (complex nets)
//   conjugate augmentation     N L sign flips, counted 1 each
//   explicit pseudoinverse     Gram 8 N M^2 + inverse 8 M^3
//     route on M columns       + back-multiply 8 N M^2 + apply 8 N M
//   WLLS statistics            Hermitian/symmetric Gram halves:
//                              2 x 4 N L (L+1), cross vectors 2 x 8 N L
//   WLLS solves                factor 8 L^3 / 3 (x2), triangular solves
//                              8 L^2 each, Schur products 2 x 8 L^3
//   baselines                  per-bin estimate and equalizer divisions
//                              plus their transform chains
//
// CELM and CELMAH are charged the explicit pseudoinverse route (form the
// generalized inverse, then apply it), which is how the augmented solver is
// classically implemented; CELM-WLLS is charged factorized solves on its
// L x L blocks. Only ratios are meaningful across conventions.

const C_MAC: u64 = 8;
const C_DIV: u64 = 16;
const ACT: u64 = 16;
const R_MAC: u64 = 2;

fn fft_flops(n: u64) -> u64 {
    let log2 = (63 - n.leading_zeros()) as u64 + u64::from(!n.is_power_of_two());
    5 * n * log2
}

fn hidden_flops(n: u64, l: u64, i: u64) -> u64 {
    C_MAC * n * l * i + ACT * n * l
}

fn pinv_route_flops(n: u64, m: u64) -> u64 {
    C_MAC * n * m * m + C_MAC * m * m * m + C_MAC * n * m * m + C_MAC * n * m
}

fn wlls_stats_flops(n: u64, l: u64) -> u64 {
    // C and P use their Hermitian/symmetric halves; r and s are full MACs.
    2 * (C_MAC / 2) * n * l * (l + 1) + 2 * C_MAC * n * l
}

fn wlls_solve_flops(l: u64) -> u64 {
    let factor = (C_MAC * l * l * l).div_ceil(3);
    let tri = C_MAC * l * l;
    // factor C, solve r, solve P* (l rhs), form P (C^-1 P*), subtract,
    // factor schur, solve alpha, apply P* alpha, solve beta.
    factor + tri + C_MAC * l * l * l + C_MAC * l * l * l + 2 * l * l + factor + tri + tri + tri
}

/// Deterministic FLOP estimate of one receiver at the given dimensions,
/// using the documented counting ledger above.
pub fn flops_estimate(kind: ReceiverKind, n: usize, l: usize, i: usize) -> u64 {
    let (n, l, i) = (n as u64, l as u64, i as u64);
    match kind {
        ReceiverKind::Ls => {
            // pilot FFT, estimate divisions, data FFT + equalize + despread
            3 * fft_flops(n) + 2 * C_DIV * n
        }
        ReceiverKind::Mmse => {
            // LS plus the MMSE per-bin arithmetic (conjugate product,
            // magnitude, bias add, division)
            3 * fft_flops(n) + C_DIV * n + (C_MAC + C_MAC + 2 + C_DIV) * n
        }
        ReceiverKind::Elm => {
            let hidden = R_MAC * n * l * (2 * i) + ACT * n * l;
            let pinv = R_MAC * n * l * l + R_MAC * l * l * l + R_MAC * n * l * l;
            let apply = 2 * R_MAC * n * l;
            let equalize = hidden + 2 * R_MAC * n * l;
            hidden + pinv + apply + equalize
        }
        ReceiverKind::Celm => {
            let train = hidden_flops(n, l, i) + pinv_route_flops(n, l);
            let equalize = hidden_flops(n, l, i) + C_MAC * n * l;
            train + equalize
        }
        ReceiverKind::Celmah => {
            let train = hidden_flops(n, l, i) + n * l + pinv_route_flops(n, 2 * l);
            let equalize = hidden_flops(n, l, i) + n * l + C_MAC * n * (2 * l);
            train + equalize
        }
        ReceiverKind::CelmWlls => {
            let train = hidden_flops(n, l, i) + wlls_stats_flops(n, l) + wlls_solve_flops(l);
            let equalize = hidden_flops(n, l, i) + n * l + C_MAC * n * (2 * l);
            train + equalize
        }
    }
}

// ---------------------------------------------------------------------------
// Trials and sweeps
// ---------------------------------------------------------------------------

/// Accumulated outcome of one receiver over one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFragment {
    pub receiver: ReceiverKind,
    pub case: CaseId,
    pub bits_total: u64,
    pub bits_error: u64,
    pub flops: u64,
}

/// One aggregated sweep point for one receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub receiver: String,
    pub case: String,
    pub ber: f64,
    pub bits_total: u64,
    pub bits_error: u64,
    pub flops: u64,
    pub seed: u64,
}

/// The forward-looking tap window of symbol `idx` in the flattened
/// received stream: body samples plus `taps - 1` samples past the symbol
/// end (zeros at the stream end).
fn symbol_window(
    stream: &[Complex64],
    idx: usize,
    params: &OfdmParams,
    taps: usize,
) -> Vec<Complex64> {
    let start = idx * params.symbol_len() + params.n_cp;
    let want = params.n_fft + taps - 1;
    let mut out = Vec::with_capacity(want);
    for k in 0..want {
        out.push(
            stream
                .get(start + k)
                .copied()
                .unwrap_or(Complex64::new(0.0, 0.0)),
        );
    }
    out
}

fn flatten(frame: &waveform::Frame) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(frame.n_symbols() * frame.pilot_symbol.len());
    out.extend_from_slice(&frame.pilot_symbol.samples);
    for s in &frame.data_symbols {
        out.extend_from_slice(&s.samples);
    }
    out
}

struct TrialContext {
    constellation: QamConstellation,
    params: OfdmParams,
    tx_frame: waveform::Frame,
    tx_pilot_body: Vec<Complex64>,
    tx_pilot_subcarriers: Vec<Complex64>,
}

fn run_ml_receiver(
    spec: &ReceiverSpec,
    ctx: &TrialContext,
    rx_stream: &[Complex64],
    channel_taps: usize,
    net_seed: u64,
) -> Result<(Vec<u8>, TrainedNetwork)> {
    let taps = spec.taps.unwrap_or(channel_taps).max(1);
    let n = ctx.params.n_fft;
    let pilot_window = symbol_window(rx_stream, 0, &ctx.params, taps);
    let z = receivers::build_tap_matrix(&pilot_window, n, taps)?;
    let target = CVector::from_fn(n, |k, _| ctx.tx_pilot_body[k]);
    let variant = spec.kind.ml_variant().expect("ml receiver");
    let net = receivers::train(
        &z,
        &target,
        variant,
        spec.hidden_nodes,
        net_seed,
        spec.theta,
        spec.ridge,
    )?;

    let mut bits = Vec::new();
    for idx in 1..=ctx.tx_frame.data_symbols.len() {
        let window = symbol_window(rx_stream, idx, &ctx.params, taps);
        let body = receivers::equalize_ml(&window, &net, n)?;
        let subs = waveform::body_to_subcarriers(&body, &ctx.params)?;
        let qam = waveform::subcarriers_to_qam(&subs);
        bits.extend(waveform::qam_demap(&qam, &ctx.constellation));
    }
    Ok((bits, net))
}

fn run_baseline_receiver(
    spec: &ReceiverSpec,
    ctx: &TrialContext,
    rx_frame: &waveform::Frame,
    snr_db: f64,
) -> Result<Vec<u8>> {
    let (rx_pilot_subs, _) = waveform::dfts_ofdm_demodulate(&rx_frame.pilot_symbol, &ctx.params)?;
    // Noise variance from the configured SNR, referenced to the measured
    // received power.
    let inv_snr = 10f64.powf(-snr_db / 10.0);
    let noise_var = rx_frame.pilot_symbol.power() * inv_snr / (1.0 + inv_snr);
    let est = receivers::smoothed_ls_channel_estimate(
        &rx_pilot_subs,
        &ctx.tx_pilot_subcarriers,
        noise_var,
        spec.smoothing_window,
    )?;
    let mut bits = Vec::new();
    for sym in &rx_frame.data_symbols {
        let (subs, _) = waveform::dfts_ofdm_demodulate(sym, &ctx.params)?;
        let (equalized, _clamped) = match spec.kind {
            ReceiverKind::Ls => receivers::equalize_ls(&subs, &est)?,
            ReceiverKind::Mmse => receivers::equalize_mmse(&subs, &est)?,
            _ => unreachable!("baseline receiver"),
        };
        let qam = waveform::subcarriers_to_qam(&equalized);
        bits.extend(waveform::qam_demap(&qam, &ctx.constellation));
    }
    Ok(bits)
}

/// Run one frame at one sweep point: generate bits, build the frame,
/// propagate, and score every configured receiver.
///
/// The ML receivers always face the full case-1 channel; the LS/MMSE
/// baselines face the channel under `cfg.case_id`. All ML receivers share
/// one input-weight seed so solver differences are compared on identical
/// hidden layers.
pub fn run_trial(
    cfg: &ExperimentConfig,
    sweep_index: usize,
    frame_index: usize,
) -> Result<Vec<TrialFragment>> {
    cfg.validate()?;
    let sweep_value = cfg.sweep.values[sweep_index];
    let base_channel = cfg.channel_at(sweep_value);
    let constellation = QamConstellation::for_order(cfg.waveform.qam_order)?;
    let params = cfg.waveform.params;

    let trial_seed = derive_seed(cfg.master_seed, sweep_index as u64, frame_index as u64);
    let mut bit_rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, STREAM_DATA_BITS, 0));
    let bits_per_symbol = params.n_occupied * constellation.bits_per_symbol();
    let data_bits =
        waveform::random_bits(&mut bit_rng, bits_per_symbol * cfg.waveform.data_symbols);
    let pilot_seed = derive_seed(trial_seed, STREAM_PILOT, 0);
    let tx_frame = waveform::build_frame(&data_bits, pilot_seed, &constellation, &params)?;

    let tx_pilot_body = tx_frame.pilot_symbol.samples[params.n_cp..].to_vec();
    let tx_pilot_subcarriers = waveform::body_to_subcarriers(&tx_pilot_body, &params)?;
    let ctx = TrialContext {
        constellation,
        params,
        tx_pilot_body,
        tx_pilot_subcarriers,
        tx_frame,
    };

    let mut ml_channel = base_channel.for_case(CaseId::Case1);
    ml_channel.seed = derive_seed(trial_seed, STREAM_CHANNEL_ML, 0);
    let rx_ml = channel::propagate(&ctx.tx_frame, &ml_channel)?;
    let rx_ml_stream = flatten(&rx_ml);

    let need_trad = cfg.receivers.iter().any(|r| !r.kind.is_ml());
    let rx_trad = if need_trad {
        if cfg.case_id == CaseId::Case1 {
            Some(rx_ml.clone())
        } else {
            let mut trad_channel = base_channel.for_case(cfg.case_id);
            trad_channel.seed = derive_seed(trial_seed, STREAM_CHANNEL_TRAD, 0);
            Some(channel::propagate(&ctx.tx_frame, &trad_channel)?)
        }
    } else {
        None
    };

    let channel_taps = base_channel
        .tdl
        .n_taps(params.sample_rate_hz())
        .unwrap_or(1);
    let net_seed = derive_seed(trial_seed, STREAM_NETWORK, 0);
    let snr_db = base_channel.snr_db;

    let mut fragments = Vec::with_capacity(cfg.receivers.len());
    for spec in &cfg.receivers {
        let (rx_bits, case) = if spec.kind.is_ml() {
            let (bits, _) = run_ml_receiver(spec, &ctx, &rx_ml_stream, channel_taps, net_seed)?;
            (bits, CaseId::Case1)
        } else {
            let rx_frame = rx_trad.as_ref().expect("baseline frame propagated");
            (
                run_baseline_receiver(spec, &ctx, rx_frame, snr_db)?,
                cfg.case_id,
            )
        };
        let errors = ctx
            .tx_frame
            .tx_bits
            .iter()
            .zip(rx_bits.iter())
            .filter(|(a, b)| a != b)
            .count() as u64;
        let taps = spec.taps.unwrap_or(channel_taps).max(1);
        fragments.push(TrialFragment {
            receiver: spec.kind,
            case,
            bits_total: ctx.tx_frame.tx_bits.len() as u64,
            bits_error: errors,
            flops: flops_estimate(spec.kind, params.n_fft, spec.hidden_nodes, taps),
        });
    }
    Ok(fragments)
}

/// Run the full sweep: `n_frames` independent trials per sweep value,
/// aggregated per receiver by summing bit counts. Trials run in parallel;
/// aggregation is order-independent.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for (sweep_index, &sweep_value) in cfg.sweep.values.iter().enumerate() {
        let trials: Vec<Vec<TrialFragment>> = (0..cfg.n_frames)
            .into_par_iter()
            .map(|frame_index| run_trial(cfg, sweep_index, frame_index))
            .collect::<Result<_>>()?;
        for (ri, spec) in cfg.receivers.iter().enumerate() {
            let mut bits_total = 0u64;
            let mut bits_error = 0u64;
            let mut flops = 0u64;
            let mut case = cfg.case_id;
            for trial in &trials {
                let frag = &trial[ri];
                bits_total += frag.bits_total;
                bits_error += frag.bits_error;
                flops = frag.flops;
                case = frag.case;
            }
            records.push(ResultRecord {
                sweep_variable: cfg.sweep.variable.to_string(),
                sweep_value,
                receiver: spec.kind.to_string(),
                case: case.to_string(),
                ber: bits_error as f64 / bits_total as f64,
                bits_total,
                bits_error,
                flops,
                seed: cfg.master_seed,
            });
        }
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::input(format!("unknown format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "sweep_variable,sweep_value,receiver,case,ber,bits_total,bits_error,flops,seed";

#[derive(Serialize, Deserialize)]
struct JsonExport {
    metadata: JsonMetadata,
    records: Vec<ResultRecord>,
}

#[derive(Serialize, Deserialize)]
struct JsonMetadata {
    /// Wall-clock stamp; the only non-reproducible output field.
    created_unix_s: u64,
}

fn sorted_for_export(records: &[ResultRecord]) -> Vec<ResultRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| {
        a.sweep_value
            .partial_cmp(&b.sweep_value)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.receiver.cmp(&b.receiver))
            .then_with(|| a.case.cmp(&b.case))
    });
    out
}

/// Render records in the given format. Row order is deterministic:
/// `(sweep_value, receiver, case)`.
pub fn export_string(records: &[ResultRecord], format: ExportFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::input("no records to export"));
    }
    let sorted = sorted_for_export(records);
    match format {
        ExportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &sorted {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.sweep_variable,
                    r.sweep_value,
                    r.receiver,
                    r.case,
                    r.ber,
                    r.bits_total,
                    r.bits_error,
                    r.flops,
                    r.seed
                ));
            }
            Ok(out)
        }
        ExportFormat::Json => {
            let doc = JsonExport {
                metadata: JsonMetadata {
                    created_unix_s: std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_secs())
                        .unwrap_or(0),
                },
                records: sorted,
            };
            serde_json::to_string_pretty(&doc).map_err(|e| Error::Parse {
                context: format!("json export: {e}"),
            })
        }
    }
}

/// Write records to `path`. Refuses to create a file for an empty record
/// list.
pub fn export(records: &[ResultRecord], format: ExportFormat, path: &Path) -> Result<()> {
    let text = export_string(records, format)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse a CSV document produced by [`export`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                context: format!("bad csv header: {other:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(Error::Parse {
                context: format!("line {}: expected 9 columns", no + 2),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                context: format!("line {}: bad float {s:?}", no + 2),
            })
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Parse {
                context: format!("line {}: bad integer {s:?}", no + 2),
            })
        };
        out.push(ResultRecord {
            sweep_variable: cols[0].to_string(),
            sweep_value: parse_f(cols[1])?,
            receiver: cols[2].to_string(),
            case: cols[3].to_string(),
            ber: parse_f(cols[4])?,
            bits_total: parse_u(cols[5])?,
            bits_error: parse_u(cols[6])?,
            flops: parse_u(cols[7])?,
            seed: parse_u(cols[8])?,
        });
    }
    Ok(out)
}

/// Parse a JSON document produced by [`export`].
pub fn parse_json(text: &str) -> Result<Vec<ResultRecord>> {
    let doc: JsonExport = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("json import: {e}"),
    })?;
    Ok(doc.records)
}
