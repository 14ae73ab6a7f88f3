//! Receivers: the ELM family trained online on the pilot symbol, and the
//! pilot-based LS/MMSE one-tap baselines.
//!
//! The ELM receivers all share the same front end: a tap-delay matrix built
//! from the received sequence (column `i` of `Z` is `y[k + I - i]` in
//! 1-based indexing, so the window of sample `k` collects its full echo
//! train) and a random hidden layer `H[k,p] = g(w_p . z(k) + b_p)` with the
//! unconjugated inner product and the principal-branch complex `asinh`
//! activation. They differ only in how the output weights are solved:
//!
//! * CELM — pseudoinverse of the plain hidden matrix, conjugate branch zero;
//! * CELMAH — pseudoinverse of the conjugate-augmented matrix `[H, H*]`;
//! * CELM-WLLS — the widely linear least-squares closed form on the
//!   second-order statistics of `H`;
//! * ELM — the same pipeline over stacked real/imaginary features with a
//!   real hidden layer, as the real-valued reference point.

use crate::numerics::{self, CMatrix, CVector, WidelyLinearWeights};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

type RMatrix = DMatrix<f64>;
type RVector = DVector<f64>;

// ---------------------------------------------------------------------------
// Tap-delay input construction
// ---------------------------------------------------------------------------

/// Regressor matrix over an `I`-tap window of the received sequence.
#[derive(Debug, Clone)]
pub struct TapDelayMatrix {
    pub z: CMatrix,
    pub n_samples: usize,
    pub n_taps: usize,
}

/// Build the `N x I` tap matrix: `Z[k, i] = y[k + I - i]` (1-based), i.e.
/// every column is a verbatim slice of `y`.
pub fn build_tap_matrix(y: &[Complex64], n: usize, taps: usize) -> Result<TapDelayMatrix> {
    if taps == 0 || n == 0 {
        return Err(Error::input("tap matrix needs N >= 1 and I >= 1"));
    }
    if y.len() < n + taps - 1 {
        return Err(Error::input(format!(
            "received sequence of {} samples is shorter than N + I - 1 = {}",
            y.len(),
            n + taps - 1
        )));
    }
    let z = CMatrix::from_fn(n, taps, |k, i| y[k + (taps - 1) - i]);
    Ok(TapDelayMatrix {
        z,
        n_samples: n,
        n_taps: taps,
    })
}

// ---------------------------------------------------------------------------
// Hidden layer
// ---------------------------------------------------------------------------

/// Hidden activation identifier. `Asinh` is the principal branch
/// `ln(z + sqrt(z^2 + 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Asinh,
}

impl Activation {
    pub fn complex(self, z: Complex64) -> Complex64 {
        match self {
            Activation::Asinh => z.asinh(),
        }
    }

    pub fn real(self, x: f64) -> f64 {
        match self {
            Activation::Asinh => x.asinh(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Asinh => "asinh",
        }
    }
}

/// `H[k,p] = g(sum_i W[p,i] Z[k,i] + b[p])` with the unconjugated inner
/// product.
pub fn hidden_layer(
    z: &TapDelayMatrix,
    w: &CMatrix,
    b: &CVector,
    activation: Activation,
) -> Result<CMatrix> {
    let l = w.nrows();
    if w.ncols() != z.n_taps || b.len() != l {
        return Err(Error::dim(format!(
            "hidden layer: W is {}x{}, b has {}, tap matrix has {} taps",
            l,
            w.ncols(),
            b.len(),
            z.n_taps
        )));
    }
    let mut h = &z.z * w.transpose();
    for p in 0..l {
        for k in 0..z.n_samples {
            h[(k, p)] = activation.complex(h[(k, p)] + b[p]);
        }
    }
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::non_finite("hidden layer activation overflow"));
    }
    Ok(h)
}

/// Conjugate augmentation `[H, H*]` of the hidden layer output.
pub fn augment_hidden(h: &CMatrix) -> CMatrix {
    numerics::augment(h)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Which post-distorter network to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlVariant {
    Elm,
    Celm,
    Celmah,
    CelmWlls,
}

impl std::fmt::Display for MlVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MlVariant::Elm => "elm",
            MlVariant::Celm => "celm",
            MlVariant::Celmah => "celmah",
            MlVariant::CelmWlls => "celm_wlls",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for MlVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elm" => Ok(MlVariant::Elm),
            "celm" => Ok(MlVariant::Celm),
            "celmah" => Ok(MlVariant::Celmah),
            "celm_wlls" => Ok(MlVariant::CelmWlls),
            other => Err(Error::input(format!("unknown variant {other:?}"))),
        }
    }
}

/// The trained parameters, complex for the CELM family and real for ELM.
#[derive(Debug, Clone)]
pub enum NetworkKind {
    Complex {
        w: CMatrix,
        b: CVector,
        weights: WidelyLinearWeights,
    },
    /// Real ELM over stacked (Re, Im) features and targets; `out` is `L x 2`
    /// (columns estimate the real and imaginary target parts).
    Real {
        w: RMatrix,
        b: RVector,
        out: RMatrix,
    },
}

/// One trained post-distorter.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub variant: MlVariant,
    pub hidden_nodes: usize,
    pub n_taps: usize,
    pub theta: f64,
    pub seed: u64,
    pub ridge: f64,
    pub activation: Activation,
    pub kind: NetworkKind,
}

fn draw_uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    rng.random_range(-bound..bound)
}

/// Default init variance of the input weights and biases. Small enough that
/// the asinh activation stays in its quasi-linear region for unit-power
/// inputs; see [`DEFAULT_HIDDEN_NODES`] for the matching network size.
pub const DEFAULT_INIT_VARIANCE: f64 = 0.01;

/// Cross-validated hidden-layer width of the CELM family.
pub const DEFAULT_HIDDEN_NODES: usize = 6;

/// Train a post-distorter on the pilot.
///
/// Input weights and biases are drawn i.i.d. from the zero-mean uniform
/// complex distribution with total variance `theta` (real and imaginary
/// parts each uniform with variance `theta/2`), deterministically from
/// `seed`: `W` row-major first, then `b`. The real ELM draws real weights
/// with per-scalar variance `theta/2` over `2I` stacked features in the
/// same order.
pub fn train(
    z: &TapDelayMatrix,
    x_pilot: &CVector,
    variant: MlVariant,
    hidden_nodes: usize,
    seed: u64,
    theta: f64,
    ridge: f64,
) -> Result<TrainedNetwork> {
    if hidden_nodes == 0 {
        return Err(Error::input("hidden node count must be >= 1"));
    }
    if x_pilot.len() != z.n_samples {
        return Err(Error::dim(format!(
            "pilot target has {} samples, tap matrix has {}",
            x_pilot.len(),
            z.n_samples
        )));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::input(format!(
            "init variance must be positive, got {theta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = hidden_nodes;
    let activation = Activation::Asinh;

    let kind = match variant {
        MlVariant::Elm => {
            // Same per-scalar variance as the complex parts (theta/2), so
            // the real net drives its activation at the same level.
            let bound = (1.5 * theta).sqrt();
            let features = 2 * z.n_taps;
            let mut w = RMatrix::zeros(l, features);
            for p in 0..l {
                for i in 0..features {
                    w[(p, i)] = draw_uniform(&mut rng, bound);
                }
            }
            let mut b = RVector::zeros(l);
            for p in 0..l {
                b[p] = draw_uniform(&mut rng, bound);
            }
            let z_real = realify_features(z);
            let h = real_hidden(&z_real, &w, &b, activation)?;
            let mut targets = RMatrix::zeros(z.n_samples, 2);
            for k in 0..z.n_samples {
                targets[(k, 0)] = x_pilot[k].re;
                targets[(k, 1)] = x_pilot[k].im;
            }
            let out = real_pinv(&h)? * targets;
            NetworkKind::Real { w, b, out }
        }
        _ => {
            let bound = (1.5 * theta).sqrt();
            let mut w = CMatrix::zeros(l, z.n_taps);
            for p in 0..l {
                for i in 0..z.n_taps {
                    let re = draw_uniform(&mut rng, bound);
                    let im = draw_uniform(&mut rng, bound);
                    w[(p, i)] = Complex64::new(re, im);
                }
            }
            let mut b = CVector::zeros(l);
            for p in 0..l {
                let re = draw_uniform(&mut rng, bound);
                let im = draw_uniform(&mut rng, bound);
                b[p] = Complex64::new(re, im);
            }
            let h = hidden_layer(z, &w, &b, activation)?;
            let weights = match variant {
                MlVariant::Celm => {
                    let beta = numerics::pseudo_inverse(&h)? * x_pilot;
                    WidelyLinearWeights {
                        beta,
                        alpha: CVector::zeros(l),
                    }
                }
                MlVariant::Celmah => numerics::augmented_pinv_solve(&h, x_pilot)?,
                MlVariant::CelmWlls => {
                    let stats = numerics::compute_stats(&h, x_pilot)?;
                    numerics::wlls_solve(&stats, ridge)?
                }
                MlVariant::Elm => unreachable!(),
            };
            NetworkKind::Complex { w, b, weights }
        }
    };

    Ok(TrainedNetwork {
        variant,
        hidden_nodes: l,
        n_taps: z.n_taps,
        theta,
        seed,
        ridge,
        activation,
        kind,
    })
}

fn realify_features(z: &TapDelayMatrix) -> RMatrix {
    RMatrix::from_fn(z.n_samples, 2 * z.n_taps, |k, i| {
        if i < z.n_taps {
            z.z[(k, i)].re
        } else {
            z.z[(k, i - z.n_taps)].im
        }
    })
}

fn real_hidden(
    z_real: &RMatrix,
    w: &RMatrix,
    b: &RVector,
    activation: Activation,
) -> Result<RMatrix> {
    let mut h = z_real * w.transpose();
    for p in 0..w.nrows() {
        for k in 0..z_real.nrows() {
            h[(k, p)] = activation.real(h[(k, p)] + b[p]);
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("real hidden layer overflow"));
    }
    Ok(h)
}

fn real_pinv(m: &RMatrix) -> Result<RMatrix> {
    // Same threshold rule as the complex pseudoinverse.
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with compute_u");
    let v_t = svd.v_t.expect("svd with compute_v");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    let k = svd.singular_values.len();
    let mut sigma_inv = RMatrix::zeros(k, k);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            sigma_inv[(i, i)] = 1.0 / sv;
        }
    }
    Ok(v_t.transpose() * sigma_inv * u.transpose())
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Equalize a received sequence with a trained network: rebuild the tap
/// matrix over `n` output samples, evaluate the hidden layer with the stored
/// weights, and apply the output layer. The result is the time-domain
/// estimate of the transmitted symbol body.
pub fn equalize_ml(y: &[Complex64], net: &TrainedNetwork, n: usize) -> Result<Vec<Complex64>> {
    let z = build_tap_matrix(y, n, net.n_taps)?;
    match &net.kind {
        NetworkKind::Complex { w, b, weights } => {
            let h = hidden_layer(&z, w, b, net.activation)?;
            let xhat = numerics::predict(&h, weights)?;
            Ok(xhat.iter().copied().collect())
        }
        NetworkKind::Real { w, b, out } => {
            let h = real_hidden(&realify_features(&z), w, b, net.activation)?;
            let est = h * out;
            Ok((0..n)
                .map(|k| Complex64::new(est[(k, 0)], est[(k, 1)]))
                .collect())
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization of trained networks
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    variant: String,
    hidden_nodes: usize,
    n_taps: usize,
    theta: f64,
    seed: u64,
    ridge: f64,
    activation: String,
    /// Row-major, re/im pairs. Real networks store im = 0.
    w: Vec<[f64; 2]>,
    b: Vec<[f64; 2]>,
    beta: Vec<[f64; 2]>,
    alpha: Vec<[f64; 2]>,
}

impl TrainedNetwork {
    /// Self-describing structured text record of the trained parameters.
    pub fn to_json_record(&self) -> String {
        let pair = |z: &Complex64| [z.re, z.im];
        let (w, b, beta, alpha) = match &self.kind {
            NetworkKind::Complex { w, b, weights } => (
                w.row_iter()
                    .flat_map(|r| r.iter().map(pair).collect::<Vec<_>>())
                    .collect(),
                b.iter().map(pair).collect(),
                weights.beta.iter().map(pair).collect(),
                weights.alpha.iter().map(pair).collect(),
            ),
            NetworkKind::Real { w, b, out } => (
                w.row_iter()
                    .flat_map(|r| r.iter().map(|&v| [v, 0.0]).collect::<Vec<_>>())
                    .collect(),
                b.iter().map(|&v| [v, 0.0]).collect(),
                // The two real output columns fold into one complex vector:
                // prediction = H (out0 + j out1).
                (0..out.nrows())
                    .map(|p| [out[(p, 0)], out[(p, 1)]])
                    .collect(),
                Vec::new(),
            ),
        };
        let record = NetworkRecord {
            variant: self.variant.to_string(),
            hidden_nodes: self.hidden_nodes,
            n_taps: self.n_taps,
            theta: self.theta,
            seed: self.seed,
            ridge: self.ridge,
            activation: self.activation.name().to_string(),
            w,
            b,
            beta,
            alpha,
        };
        serde_json::to_string_pretty(&record).expect("network record serializes")
    }

    pub fn from_json_record(text: &str) -> Result<Self> {
        let rec: NetworkRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: format!("network record: {e}"),
        })?;
        let variant: MlVariant = rec.variant.parse()?;
        if rec.activation != "asinh" {
            return Err(Error::Parse {
                context: format!("unknown activation {:?}", rec.activation),
            });
        }
        let l = rec.hidden_nodes;
        let kind = match variant {
            MlVariant::Elm => {
                let features = 2 * rec.n_taps;
                if rec.w.len() != l * features || rec.b.len() != l || rec.beta.len() != l {
                    return Err(Error::Parse {
                        context: "real network record has inconsistent shapes".into(),
                    });
                }
                let w = RMatrix::from_fn(l, features, |p, i| rec.w[p * features + i][0]);
                let b = RVector::from_fn(l, |p, _| rec.b[p][0]);
                let out = RMatrix::from_fn(l, 2, |p, col| rec.beta[p][col]);
                NetworkKind::Real { w, b, out }
            }
            _ => {
                if rec.w.len() != l * rec.n_taps || rec.b.len() != l || rec.beta.len() != l {
                    return Err(Error::Parse {
                        context: "network record has inconsistent shapes".into(),
                    });
                }
                let w = CMatrix::from_fn(l, rec.n_taps, |p, i| {
                    let v = rec.w[p * rec.n_taps + i];
                    Complex64::new(v[0], v[1])
                });
                let b = CVector::from_fn(l, |p, _| Complex64::new(rec.b[p][0], rec.b[p][1]));
                let beta =
                    CVector::from_fn(l, |p, _| Complex64::new(rec.beta[p][0], rec.beta[p][1]));
                let alpha = if rec.alpha.is_empty() {
                    CVector::zeros(l)
                } else {
                    if rec.alpha.len() != l {
                        return Err(Error::Parse {
                            context: "alpha length disagrees with hidden nodes".into(),
                        });
                    }
                    CVector::from_fn(l, |p, _| Complex64::new(rec.alpha[p][0], rec.alpha[p][1]))
                };
                NetworkKind::Complex {
                    w,
                    b,
                    weights: WidelyLinearWeights { beta, alpha },
                }
            }
        };
        Ok(TrainedNetwork {
            variant,
            hidden_nodes: l,
            n_taps: rec.n_taps,
            theta: rec.theta,
            seed: rec.seed,
            ridge: rec.ridge,
            activation: Activation::Asinh,
            kind,
        })
    }
}

// ---------------------------------------------------------------------------
// LS / MMSE baselines
// ---------------------------------------------------------------------------

/// Frequency-domain channel state for the one-tap baselines.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub h_f: Vec<Complex64>,
    pub noise_var: f64,
}

/// Per-subcarrier least-squares estimate `H[m] = Y[m] / X[m]`.
pub fn ls_channel_estimate(
    rx_pilot_subcarriers: &[Complex64],
    tx_pilot_subcarriers: &[Complex64],
    noise_var: f64,
) -> Result<ChannelEstimate> {
    if rx_pilot_subcarriers.len() != tx_pilot_subcarriers.len() {
        return Err(Error::dim(format!(
            "pilot subcarrier counts disagree: rx {}, tx {}",
            rx_pilot_subcarriers.len(),
            tx_pilot_subcarriers.len()
        )));
    }
    if noise_var < 0.0 {
        return Err(Error::input("noise variance must be >= 0"));
    }
    let h_f = rx_pilot_subcarriers
        .iter()
        .zip(tx_pilot_subcarriers.iter())
        .map(|(&y, &x)| {
            if x.norm_sqr() == 0.0 {
                Err(Error::input("zero tx pilot subcarrier"))
            } else {
                Ok(y / x)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelEstimate { h_f, noise_var })
}

/// Sliding-window regularized estimate
/// `H[m] = sum_w Y X* / sum_w |X|^2` over `window` neighbouring bins.
///
/// The raw per-bin division is unusable on spread pilots whose spectrum has
/// deep nulls; averaging over a window narrower than the channel coherence
/// bandwidth removes the noise blow-up while keeping the frequency
/// selectivity. `window <= 1` degenerates to [`ls_channel_estimate`].
pub fn smoothed_ls_channel_estimate(
    rx_pilot_subcarriers: &[Complex64],
    tx_pilot_subcarriers: &[Complex64],
    noise_var: f64,
    window: usize,
) -> Result<ChannelEstimate> {
    if window <= 1 {
        return ls_channel_estimate(rx_pilot_subcarriers, tx_pilot_subcarriers, noise_var);
    }
    let m = rx_pilot_subcarriers.len();
    if tx_pilot_subcarriers.len() != m {
        return Err(Error::dim(format!(
            "pilot subcarrier counts disagree: rx {}, tx {}",
            m,
            tx_pilot_subcarriers.len()
        )));
    }
    let half = window / 2;
    let mut h_f = Vec::with_capacity(m);
    for i in 0..m {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(m);
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for j in lo..hi {
            num += rx_pilot_subcarriers[j] * tx_pilot_subcarriers[j].conj();
            den += tx_pilot_subcarriers[j].norm_sqr();
        }
        if den == 0.0 {
            return Err(Error::input("zero tx pilot power inside smoothing window"));
        }
        h_f.push(num / den);
    }
    Ok(ChannelEstimate { h_f, noise_var })
}

const EQ_CLAMP: f64 = 1e-12;

/// Per-subcarrier zero-forcing equalizer `X[m] = Y[m] / H[m]`. Returns the
/// equalized values and the number of bins where the divisor magnitude was
/// clamped to `1e-12`.
pub fn equalize_ls(
    rx_subcarriers: &[Complex64],
    est: &ChannelEstimate,
) -> Result<(Vec<Complex64>, usize)> {
    if rx_subcarriers.len() != est.h_f.len() {
        return Err(Error::dim(format!(
            "subcarrier counts disagree: rx {}, estimate {}",
            rx_subcarriers.len(),
            est.h_f.len()
        )));
    }
    let mut clamped = 0usize;
    let out = rx_subcarriers
        .iter()
        .zip(est.h_f.iter())
        .map(|(&y, &h)| {
            if h.norm() < EQ_CLAMP {
                clamped += 1;
                y / Complex64::new(EQ_CLAMP, 0.0)
            } else {
                y / h
            }
        })
        .collect();
    Ok((out, clamped))
}

/// Per-subcarrier MMSE equalizer `X[m] = H*[m] Y[m] / (|H[m]|^2 + s^2)`.
pub fn equalize_mmse(
    rx_subcarriers: &[Complex64],
    est: &ChannelEstimate,
) -> Result<(Vec<Complex64>, usize)> {
    if rx_subcarriers.len() != est.h_f.len() {
        return Err(Error::dim(format!(
            "subcarrier counts disagree: rx {}, estimate {}",
            rx_subcarriers.len(),
            est.h_f.len()
        )));
    }
    let mut clamped = 0usize;
    let out = rx_subcarriers
        .iter()
        .zip(est.h_f.iter())
        .map(|(&y, &h)| {
            let denom = h.norm_sqr() + est.noise_var;
            if denom < EQ_CLAMP {
                clamped += 1;
                h.conj() * y / EQ_CLAMP
            } else {
                h.conj() * y / denom
            }
        })
        .collect();
    Ok((out, clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_noise, tdl_apply, TdlProfile, TdlTap};
    use crate::signal::ComplexSignal;
    use crate::waveform::{qam_demap, qam_map, random_bits, QamConstellation};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_qpsk(seed: u64, n: usize) -> Vec<Complex64> {
        let c4 = QamConstellation::qam4();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        qam_map(&random_bits(&mut rng, 2 * n), &c4).unwrap()
    }

    #[test]
    fn tap_matrix_worked_example() {
        let y: Vec<Complex64> = (1..=5).map(|v| c(v as f64, 0.0)).collect();
        let z = build_tap_matrix(&y, 4, 2).unwrap();
        assert_eq!(z.z.shape(), (4, 2));
        // Column 1 (index 0) = (y2, y3, y4, y5); column 2 = (y1..y4).
        for k in 0..4 {
            assert_eq!(z.z[(k, 0)], y[k + 1]);
            assert_eq!(z.z[(k, 1)], y[k]);
        }
    }

    #[test]
    fn tap_matrix_single_tap_is_prefix() {
        let y = random_qpsk(3, 16);
        let z = build_tap_matrix(&y, 12, 1).unwrap();
        for (k, want) in y.iter().enumerate().take(12) {
            assert_eq!(z.z[(k, 0)], *want);
        }
    }

    #[test]
    fn tap_matrix_rejects_short_input() {
        let y = random_qpsk(4, 8);
        assert!(build_tap_matrix(&y, 8, 2).is_err());
    }

    #[test]
    fn hidden_layer_zero_weights_and_known_value() {
        let y = random_qpsk(5, 10);
        let z = build_tap_matrix(&y, 8, 1).unwrap();
        let w = CMatrix::zeros(2, 1);
        let b = CVector::zeros(2);
        let h = hidden_layer(&z, &w, &b, Activation::Asinh).unwrap();
        assert!(h.iter().all(|v| v.norm() == 0.0));

        // asinh(1) = ln(1 + sqrt(2))
        let y1 = vec![c(1.0, 0.0)];
        let z1 = build_tap_matrix(&y1, 1, 1).unwrap();
        let w1 = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let h = hidden_layer(&z1, &w1, &CVector::zeros(1), Activation::Asinh).unwrap();
        assert!((h[(0, 0)].re - (1.0 + 2.0_f64.sqrt()).ln()).abs() < 1e-12);
        assert!(h[(0, 0)].im.abs() < 1e-15);
    }

    #[test]
    fn hidden_layer_conjugation_symmetry() {
        // Conjugating W, b, Z conjugates H (away from the branch cuts).
        let y = random_qpsk(6, 20);
        let z = build_tap_matrix(&y, 16, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = CMatrix::from_fn(4, 3, |_, _| {
            c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
        });
        let b = CVector::from_fn(4, |_, _| {
            c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
        });
        let h = hidden_layer(&z, &w, &b, Activation::Asinh).unwrap();
        let z_conj = TapDelayMatrix {
            z: z.z.conjugate(),
            n_samples: z.n_samples,
            n_taps: z.n_taps,
        };
        let h2 = hidden_layer(&z_conj, &w.conjugate(), &b.conjugate(), Activation::Asinh).unwrap();
        assert!((h2 - h.conjugate()).norm() < 1e-12);
    }

    #[test]
    fn hidden_layer_overflow_is_an_error() {
        let y = vec![c(1e200, 0.0); 6];
        let z = build_tap_matrix(&y, 4, 2).unwrap();
        let w = CMatrix::from_element(2, 2, c(1e200, 0.0));
        let b = CVector::zeros(2);
        assert!(matches!(
            hidden_layer(&z, &w, &b, Activation::Asinh),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn identity_channel_bits_recover_under_noise() {
        // Pilot-trained net, 30 dB noise on both pilot and data: the
        // demapped data bits match the transmitted ones.
        let c4 = QamConstellation::qam4();
        let n = 256usize;
        let tx = random_qpsk(51, 2 * n + 4);
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let noisy = add_noise(&ComplexSignal::new(tx.clone(), 1.0), 1e-3, &mut rng);
        let pilot_window = &noisy.samples[..n + 2];
        let z = build_tap_matrix(pilot_window, n, 3).unwrap();
        let target = CVector::from_fn(n, |k, _| tx[k]);
        let net = train(
            &z,
            &target,
            MlVariant::Celmah,
            6,
            8,
            DEFAULT_INIT_VARIANCE,
            0.0,
        )
        .unwrap();
        let data_window = &noisy.samples[n..2 * n + 2];
        let eq = equalize_ml(data_window, &net, n).unwrap();
        let tx_data: Vec<Complex64> = tx[n..2 * n].to_vec();
        assert_eq!(qam_demap(&eq, &c4), qam_demap(&tx_data, &c4));
    }

    #[test]
    fn augment_hidden_shape() {
        let h = CMatrix::from_element(3, 2, c(0.0, 1.0));
        let a = augment_hidden(&h);
        assert_eq!(a.shape(), (3, 4));
        assert_eq!(a[(0, 2)], c(0.0, -1.0));
    }

    /// Identity channel: the received sequence is the pilot itself.
    fn identity_raw(seed: u64, n: usize, taps: usize) -> (Vec<Complex64>, TapDelayMatrix, CVector) {
        let x = random_qpsk(seed, n + taps - 1);
        let z = build_tap_matrix(&x, n, taps).unwrap();
        // Target x[k] aligns with tap i = I (the last column) of the
        // forward-looking window.
        let target = CVector::from_fn(n, |k, _| x[k]);
        (x, z, target)
    }

    fn identity_training_data(seed: u64, n: usize, taps: usize) -> (TapDelayMatrix, CVector) {
        let (_, z, target) = identity_raw(seed, n, taps);
        (z, target)
    }

    #[test]
    fn all_variants_fit_identity_channel() {
        let (y_raw, z, x) = identity_raw(11, 512, 3);
        let theta = DEFAULT_INIT_VARIANCE;
        let mse_of = |net: &TrainedNetwork| -> f64 {
            let h_pred = match &net.kind {
                NetworkKind::Complex { w, b, weights } => {
                    let h = hidden_layer(&z, w, b, net.activation).unwrap();
                    numerics::predict(&h, weights).unwrap()
                }
                NetworkKind::Real { w, b, out } => {
                    let h = real_hidden(&realify_features(&z), w, b, net.activation).unwrap();
                    let est = h * out;
                    CVector::from_fn(z.n_samples, |k, _| c(est[(k, 0)], est[(k, 1)]))
                }
            };
            (&h_pred - &x).norm_squared() / x.norm_squared()
        };
        for variant in [MlVariant::Celm, MlVariant::Celmah, MlVariant::CelmWlls] {
            let net = train(&z, &x, variant, 6, 42, theta, 0.0).unwrap();
            let rel = mse_of(&net);
            assert!(rel <= 1e-3, "{variant}: relative MSE {rel}");
        }
        // At L = 6 the real net has fewer hidden basis functions than its
        // stacked feature dimension (2I + bias = 7), so an exact fit is out
        // of reach at any theta; the pilot still demaps exactly.
        let elm = train(&z, &x, MlVariant::Elm, 6, 42, theta, 0.0).unwrap();
        let rel = mse_of(&elm);
        assert!(rel <= 1e-2, "elm: relative MSE {rel}");
        let c4 = QamConstellation::qam4();
        let eq = equalize_ml(&y_raw, &elm, 512).unwrap();
        let tx_syms: Vec<Complex64> = x.iter().copied().collect();
        assert_eq!(
            crate::waveform::qam_demap(&eq, &c4),
            crate::waveform::qam_demap(&tx_syms, &c4)
        );
    }

    #[test]
    fn celmah_equals_wlls_on_full_rank_pilot() {
        let (z, x) = identity_training_data(13, 400, 3);
        let a = train(&z, &x, MlVariant::Celmah, 6, 7, 1.0, 0.0).unwrap();
        let b = train(&z, &x, MlVariant::CelmWlls, 6, 7, 1.0, 0.0).unwrap();
        let y: Vec<Complex64> = (0..z.n_samples + 2)
            .map(|k| {
                if k < z.n_samples {
                    z.z[(k.min(z.n_samples - 1), 2)]
                } else {
                    c(0.0, 0.0)
                }
            })
            .collect();
        let pa = equalize_ml(&y, &a, z.n_samples).unwrap();
        let pb = equalize_ml(&y, &b, z.n_samples).unwrap();
        let scale: f64 = pa.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let diff: f64 = pa
            .iter()
            .zip(pb.iter())
            .map(|(u, v)| (u - v).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-6 * scale.max(1e-9), "diff {diff}, scale {scale}");
    }

    #[test]
    fn celm_is_celmah_without_conjugate_block() {
        let (z, x) = identity_training_data(17, 300, 3);
        let celm = train(&z, &x, MlVariant::Celm, 6, 5, 1.0, 0.0).unwrap();
        let celmah = train(&z, &x, MlVariant::Celmah, 6, 5, 1.0, 0.0).unwrap();
        // Same seed gives identical hidden layers; re-solving beta on the
        // unaugmented H reproduces CELM's weights.
        let (w, b) = match &celmah.kind {
            NetworkKind::Complex { w, b, .. } => (w.clone(), b.clone()),
            _ => unreachable!(),
        };
        let h = hidden_layer(&z, &w, &b, Activation::Asinh).unwrap();
        let beta_resolved = numerics::pseudo_inverse(&h).unwrap() * &x;
        match &celm.kind {
            NetworkKind::Complex { weights, .. } => {
                assert!((&weights.beta - &beta_resolved).norm() < 1e-9 * beta_resolved.norm());
                assert!(weights.alpha.norm() == 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (z, x) = identity_training_data(19, 200, 3);
        for variant in [MlVariant::Elm, MlVariant::Celmah] {
            let a = train(&z, &x, variant, 6, 123, 1.0, 0.0).unwrap();
            let b = train(&z, &x, variant, 6, 123, 1.0, 0.0).unwrap();
            assert_eq!(a.to_json_record(), b.to_json_record());
        }
    }

    #[test]
    fn equalize_reproduces_training_prediction() {
        let x = random_qpsk(23, 130);
        let z = build_tap_matrix(&x, 128, 3).unwrap();
        let target = CVector::from_fn(128, |k, _| x[k]);
        let net = train(&z, &target, MlVariant::Celmah, 6, 9, 1.0, 0.0).unwrap();
        let eq = equalize_ml(&x, &net, 128).unwrap();
        match &net.kind {
            NetworkKind::Complex { w, b, weights } => {
                let h = hidden_layer(&z, w, b, net.activation).unwrap();
                let pred = numerics::predict(&h, weights).unwrap();
                for (a, b) in eq.iter().zip(pred.iter()) {
                    assert_eq!(a, b);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn equalize_zero_input_gives_constant_rows() {
        let (z, x) = identity_training_data(29, 150, 3);
        let net = train(&z, &x, MlVariant::Celmah, 4, 3, 1.0, 0.0).unwrap();
        let zeros = vec![c(0.0, 0.0); 62];
        let out = equalize_ml(&zeros, &net, 60).unwrap();
        for v in &out {
            assert!((v - out[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn network_record_round_trip() {
        let (z, x) = identity_training_data(31, 100, 2);
        for variant in [MlVariant::Elm, MlVariant::Celm, MlVariant::CelmWlls] {
            let net = train(&z, &x, variant, 5, 77, 0.8, 1e-8).unwrap();
            let text = net.to_json_record();
            // Self-describing keys present.
            for key in [
                "variant",
                "hidden_nodes",
                "theta",
                "seed",
                "w",
                "b",
                "beta",
                "alpha",
            ] {
                assert!(text.contains(key), "{variant}: missing {key}");
            }
            let back = TrainedNetwork::from_json_record(&text).unwrap();
            assert_eq!(back.to_json_record(), text);
            // Reconstructed network predicts identically.
            let y = random_qpsk(32, 40);
            let a = equalize_ml(&y, &net, 38).unwrap();
            let b = equalize_ml(&y, &back, 38).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn conjugate_branch_tracks_channel_impropriety() {
        // The conjugate branch earns its keep on improper channels: under a
        // widely-linear mixing (I/Q imbalance) the WLLS fit error drops far
        // below the strictly linear CELM's, while on a propriety-preserving
        // channel the two fits are comparable.
        let profile = TdlProfile {
            taps: vec![
                TdlTap {
                    delay_samples: 0,
                    gain: c(0.9, 0.2),
                    extra_doppler_hz: 0.0,
                },
                TdlTap {
                    delay_samples: 1,
                    gain: c(-0.08, 0.1),
                    extra_doppler_hz: 0.0,
                },
            ],
            ..TdlProfile::default()
        };
        let gain_for = |improper: bool, seed: u64| -> f64 {
            let n = 1024usize;
            let x = random_qpsk(seed, n + 8);
            let clean = tdl_apply(&ComplexSignal::new(x.clone(), 1.0e6), &profile, 0.0).unwrap();
            let mixed = if improper {
                crate::channel::iq_phase_noise_apply(&clean, 0.0, 1.39, &vec![0.0; clean.len()])
                    .unwrap()
            } else {
                clean
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5555);
            let noisy = add_noise(&mixed, 1e-4, &mut rng);
            let z = build_tap_matrix(&noisy.samples, n, 3).unwrap();
            let target = CVector::from_fn(n, |k, _| x[k]);
            let mse = |variant: MlVariant| -> f64 {
                let net = train(&z, &target, variant, 6, 99, DEFAULT_INIT_VARIANCE, 0.0).unwrap();
                let pred = equalize_ml(&noisy.samples, &net, n).unwrap();
                pred.iter()
                    .zip(target.iter())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    / target.norm_squared()
            };
            mse(MlVariant::Celm) / mse(MlVariant::CelmWlls)
        };
        let seeds = [1u64, 2, 3, 4, 5];
        let proper: f64 = seeds.iter().map(|&s| gain_for(false, s)).sum::<f64>() / 5.0;
        let improper: f64 = seeds.iter().map(|&s| gain_for(true, s)).sum::<f64>() / 5.0;
        assert!(
            proper < 2.0,
            "on a proper channel the branches should fit alike, ratio {proper:.3}"
        );
        assert!(
            improper > 10.0 * proper,
            "improper-channel MSE gain {improper:.3} not clearly above proper-channel {proper:.3}"
        );
    }

    #[test]
    fn ls_estimate_and_equalizers() {
        // Flat channel: every bin equals h.
        let h = c(0.8, -0.6);
        let tx = random_qpsk(41, 32);
        let rx: Vec<Complex64> = tx.iter().map(|&x| h * x).collect();
        let est = ls_channel_estimate(&rx, &tx, 0.0).unwrap();
        for v in &est.h_f {
            assert!((v - h).norm() < 1e-12);
        }

        // Y = X gives all-ones.
        let est1 = ls_channel_estimate(&tx, &tx, 0.0).unwrap();
        for v in &est1.h_f {
            assert!((v - c(1.0, 0.0)).norm() < 1e-12);
        }

        // sigma^2 = 0 makes MMSE and LS coincide.
        let (eq_ls, cl) = equalize_ls(&rx, &est).unwrap();
        let (eq_mmse, _) = equalize_mmse(&rx, &est).unwrap();
        assert_eq!(cl, 0);
        for ((a, b), x) in eq_ls.iter().zip(eq_mmse.iter()).zip(tx.iter()) {
            assert!((a - b).norm() < 1e-10);
            assert!((a - x).norm() < 1e-10);
        }

        // Worked MMSE value: H = 2, Y = 2, sigma^2 = 2 -> 2/3.
        let est2 = ChannelEstimate {
            h_f: vec![c(2.0, 0.0)],
            noise_var: 2.0,
        };
        let (eq, _) = equalize_mmse(&[c(2.0, 0.0)], &est2).unwrap();
        assert!((eq[0] - c(2.0 / 3.0, 0.0)).norm() < 1e-12);

        // Zero estimate bins are clamped and counted.
        let est3 = ChannelEstimate {
            h_f: vec![c(0.0, 0.0), c(1.0, 0.0)],
            noise_var: 0.0,
        };
        let (_, clamped) = equalize_ls(&[c(1.0, 0.0), c(1.0, 0.0)], &est3).unwrap();
        assert_eq!(clamped, 1);

        // Zero tx subcarrier is an error.
        assert!(ls_channel_estimate(&[c(1.0, 0.0)], &[c(0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn ls_estimate_matches_tap_dft() {
        // Two-tap time channel, noiseless: H_f equals the DFT of the taps.
        use crate::waveform::{body_to_subcarriers, OfdmParams};
        let params = OfdmParams {
            n_fft: 64,
            subcarrier_spacing_hz: 15_000.0,
            n_cp: 8,
            n_occupied: 64,
        };
        let taps = [c(1.0, 0.0), c(0.35, -0.2)];
        let x = random_qpsk(43, 64);
        // Circular convolution of the body (what the CP buys us).
        let mut rx_body = vec![c(0.0, 0.0); 64];
        for (k, item) in rx_body.iter_mut().enumerate() {
            *item = taps[0] * x[k] + taps[1] * x[(k + 63) % 64];
        }
        let tx_sub = body_to_subcarriers(&x, &params).unwrap();
        let rx_sub = body_to_subcarriers(&rx_body, &params).unwrap();
        let est = ls_channel_estimate(&rx_sub, &tx_sub, 0.0).unwrap();
        for (m, v) in est.h_f.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * m as f64 / 64.0;
            let want = taps[0] + taps[1] * Complex64::from_polar(1.0, phase);
            assert!((v - want).norm() < 1e-9, "bin {m}");
        }
    }

    #[test]
    fn smoothed_estimate_flat_channel_noise_reduction() {
        let h = c(1.1, 0.4);
        let tx = random_qpsk(47, 256);
        let clean: Vec<Complex64> = tx.iter().map(|&x| h * x).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let noisy = add_noise(&ComplexSignal::new(clean, 1.0), 0.05, &mut rng);
        let raw = ls_channel_estimate(&noisy.samples, &tx, 0.05).unwrap();
        let smooth = smoothed_ls_channel_estimate(&noisy.samples, &tx, 0.05, 64).unwrap();
        let err = |est: &ChannelEstimate| -> f64 {
            est.h_f.iter().map(|v| (v - h).norm_sqr()).sum::<f64>() / est.h_f.len() as f64
        };
        assert!(err(&smooth) < err(&raw) / 8.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn prop_tap_matrix_columns_are_slices(seed in 0u64..100_000, n in 1usize..40, taps in 1usize..6) {
            let y = random_qpsk(seed, n + taps - 1 + (seed % 4) as usize);
            let z = build_tap_matrix(&y, n, taps).unwrap();
            prop_assert_eq!(z.z.shape(), (n, taps));
            for i in 0..taps {
                let start = taps - 1 - i;
                for k in 0..n {
                    prop_assert_eq!(z.z[(k, i)], y[start + k]);
                }
            }
        }
    }
}
