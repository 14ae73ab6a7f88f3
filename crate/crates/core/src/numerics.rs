//! Complex dense linear algebra for the widely linear output-weight solvers.
//!
//! Two routes produce the output weights of an augmented network:
//!
//! * [`augmented_pinv_solve`] — the Moore-Penrose pseudoinverse of the
//!   augmented matrix `[H, H*]` applied to the target (minimum-norm
//!   least squares).
//! * [`wlls_solve`] — block elimination of the widely linear normal
//!   equations `C b + P* a = r`, `P b + C* a = s` via the Schur complement
//!   of `C`, using only L-by-L factorizations.
//!
//! For full-column-rank augmented matrices both routes agree; the test
//! suite enforces this equivalence against an independent dense oracle.

use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Instantaneous second-order statistics of a regressor matrix `H` and a
/// target `x`:
///
/// * `c = H^H H` (autocorrelation, Hermitian PSD)
/// * `p = H^T H` (pseudo-autocorrelation, complex symmetric)
/// * `r = H^H x`
/// * `s = H^T x`
#[derive(Debug, Clone)]
pub struct SecondOrderStats {
    pub c: CMatrix,
    pub p: CMatrix,
    pub r: CVector,
    pub s: CVector,
    pub n_samples: usize,
}

/// Output weights of a widely linear regressor: `x_hat = H beta + H* alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct WidelyLinearWeights {
    /// Strictly linear branch.
    pub beta: CVector,
    /// Conjugate branch.
    pub alpha: CVector,
}

impl WidelyLinearWeights {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.beta
            .iter()
            .chain(self.alpha.iter())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn require_finite_mat(m: &CMatrix, ctx: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(ctx.to_string()))
    }
}

fn require_finite_vec(v: &CVector, ctx: &str) -> Result<()> {
    if v.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::non_finite(ctx.to_string()))
    }
}

impl SecondOrderStats {
    /// Cheap structural checks: consistent dimensions, finite entries,
    /// Hermitian `C` and symmetric `P` within 1e-12 relative.
    pub fn validate(&self) -> Result<()> {
        let l = self.c.nrows();
        if l == 0 {
            return Err(Error::input("stats dimension L must be >= 1"));
        }
        if self.c.ncols() != l || self.p.nrows() != l || self.p.ncols() != l {
            return Err(Error::dim(format!(
                "stats blocks disagree: C {}x{}, P {}x{}",
                self.c.nrows(),
                self.c.ncols(),
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.r.len() != l || self.s.len() != l {
            return Err(Error::dim(format!(
                "stats vectors disagree: r {}, s {}, L {}",
                self.r.len(),
                self.s.len(),
                l
            )));
        }
        require_finite_mat(&self.c, "stats C")?;
        require_finite_mat(&self.p, "stats P")?;
        require_finite_vec(&self.r, "stats r")?;
        require_finite_vec(&self.s, "stats s")?;
        let scale_c = self.c.norm().max(1.0);
        if (&self.c - self.c.adjoint()).norm() > 1e-12 * scale_c {
            return Err(Error::input("stats C is not Hermitian"));
        }
        let scale_p = self.p.norm().max(1.0);
        if (&self.p - self.p.transpose()).norm() > 1e-12 * scale_p {
            return Err(Error::input("stats P is not symmetric"));
        }
        Ok(())
    }
}

/// Gram products and cross vectors of `(H, x)`.
///
/// `C` and `P` are symmetrized after the product so the Hermitian/symmetric
/// invariants hold exactly, not just to rounding.
pub fn compute_stats(h: &CMatrix, x: &CVector) -> Result<SecondOrderStats> {
    let (n, l) = h.shape();
    if n == 0 || l == 0 {
        return Err(Error::input("compute_stats needs N >= 1 and L >= 1"));
    }
    if x.len() != n {
        return Err(Error::dim(format!(
            "compute_stats: H is {}x{} but x has {} entries",
            n,
            l,
            x.len()
        )));
    }
    require_finite_mat(h, "compute_stats H")?;
    require_finite_vec(x, "compute_stats x")?;

    let mut c = h.adjoint() * h;
    c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    let mut p = h.transpose() * h;
    p = (&p + p.transpose()) * Complex64::new(0.5, 0.0);
    let r = h.adjoint() * x;
    let s = h.transpose() * x;
    Ok(SecondOrderStats {
        c,
        p,
        r,
        s,
        n_samples: n,
    })
}

fn add_ridge(m: &CMatrix, ridge: f64) -> CMatrix {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += Complex64::new(ridge, 0.0);
    }
    out
}

/// Either factorization of a (nominally Hermitian) system matrix.
enum Factor {
    Chol(Cholesky<Complex64, Dyn>),
    Lu(LU<Complex64, Dyn, Dyn>),
}

impl Factor {
    /// Hermitian factorization first; generic LU as fallback. `None` when the
    /// matrix is singular. Pivots are judged against `scale`, the magnitude
    /// of the terms that formed the matrix, so that a block that cancels to
    /// roundoff (e.g. the Schur complement of jointly real data) is reported
    /// singular rather than "inverted" into garbage.
    fn new(m: CMatrix, scale: f64) -> Option<Self> {
        let k = m.nrows();
        let tol = k as f64 * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
        if let Some(chol) = Cholesky::new(m.clone()) {
            let l = chol.l_dirty();
            let min_pivot = (0..k)
                .map(|i| l[(i, i)].norm_sqr())
                .fold(f64::INFINITY, f64::min);
            if min_pivot > tol {
                return Some(Factor::Chol(chol));
            }
            return None;
        }
        let lu = LU::new(m);
        let u = lu.u();
        let min_pivot = (0..k)
            .map(|i| u[(i, i)].norm())
            .fold(f64::INFINITY, f64::min);
        if min_pivot > tol {
            Some(Factor::Lu(lu))
        } else {
            None
        }
    }

    fn solve_mat(&self, b: &CMatrix) -> Option<CMatrix> {
        match self {
            Factor::Chol(c) => Some(c.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }

    fn solve_vec(&self, b: &CVector) -> Option<CVector> {
        match self {
            Factor::Chol(c) => Some(c.solve(b)),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

/// Widely linear least squares by block elimination.
///
/// Solves the regularized normal equations
///
/// ```text
/// (C + ridge I) beta + P*              alpha = r
/// P             beta + (C* + ridge I)  alpha = s
/// ```
///
/// by eliminating `beta`: with `Cr = C + ridge I`,
///
/// ```text
/// schur = C* + ridge I - P Cr^-1 P*
/// alpha = schur^-1 (s - P Cr^-1 r)
/// beta  = Cr^-1 (r - P* alpha)
/// ```
pub fn wlls_solve(stats: &SecondOrderStats, ridge: f64) -> Result<WidelyLinearWeights> {
    stats.validate()?;
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::input(format!("ridge must be >= 0, got {ridge}")));
    }

    let c_scale = stats.c.norm() + ridge;
    let c_reg = add_ridge(&stats.c, ridge);
    let factor_c = Factor::new(c_reg, c_scale).ok_or(Error::SingularSystem { block: "C" })?;

    let p_conj = stats.p.conjugate();
    let c_inv_r = factor_c
        .solve_vec(&stats.r)
        .ok_or(Error::SingularSystem { block: "C" })?;
    let c_inv_pc = factor_c
        .solve_mat(&p_conj)
        .ok_or(Error::SingularSystem { block: "C" })?;

    let correction = &stats.p * &c_inv_pc;
    let schur_scale = c_scale + correction.norm();
    let schur = add_ridge(&stats.c.conjugate(), ridge) - correction;
    let rhs = &stats.s - &stats.p * &c_inv_r;
    let factor_schur =
        Factor::new(schur, schur_scale).ok_or(Error::SingularSystem { block: "schur" })?;
    let alpha = factor_schur
        .solve_vec(&rhs)
        .ok_or(Error::SingularSystem { block: "schur" })?;

    let beta = factor_c
        .solve_vec(&(&stats.r - &p_conj * &alpha))
        .ok_or(Error::SingularSystem { block: "C" })?;

    let w = WidelyLinearWeights { beta, alpha };
    if !w.all_finite() {
        return Err(Error::SingularSystem { block: "schur" });
    }
    Ok(w)
}

/// `[H, H*]`: the input columns followed by their entrywise conjugates.
pub fn augment(h: &CMatrix) -> CMatrix {
    let (n, l) = h.shape();
    let mut out = CMatrix::zeros(n, 2 * l);
    out.view_mut((0, 0), (n, l)).copy_from(h);
    out.view_mut((0, l), (n, l)).copy_from(&h.conjugate());
    out
}

/// Minimum-norm least squares on the augmented matrix: forms `[H, H*]`,
/// applies its pseudoinverse to `x`, and splits the solution into
/// `(beta, alpha)`. Rank deficiency is not an error.
pub fn augmented_pinv_solve(h: &CMatrix, x: &CVector) -> Result<WidelyLinearWeights> {
    let (n, l) = h.shape();
    if n == 0 || l == 0 {
        return Err(Error::input("augmented_pinv_solve needs N >= 1 and L >= 1"));
    }
    if x.len() != n {
        return Err(Error::dim(format!(
            "augmented_pinv_solve: H is {}x{} but x has {} entries",
            n,
            l,
            x.len()
        )));
    }
    require_finite_mat(h, "augmented_pinv_solve H")?;
    require_finite_vec(x, "augmented_pinv_solve x")?;

    let pinv = pseudo_inverse(&augment(h))?;
    let stacked = pinv * x;
    let beta = CVector::from_iterator(l, stacked.iter().take(l).copied());
    let alpha = CVector::from_iterator(l, stacked.iter().skip(l).copied());
    Ok(WidelyLinearWeights { beta, alpha })
}

/// Moore-Penrose pseudoinverse by singular value decomposition.
///
/// Singular values below `max(rows, cols) * eps_machine * sigma_max` are
/// treated as zero.
pub fn pseudo_inverse(m: &CMatrix) -> Result<CMatrix> {
    require_finite_mat(m, "pseudo_inverse input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::input("pseudo_inverse of an empty matrix"));
    }

    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with compute_u");
    let v_t = svd.v_t.expect("svd with compute_v");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;

    let k = svd.singular_values.len();
    let mut sigma_inv = CMatrix::zeros(k, k);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            sigma_inv[(i, i)] = Complex64::new(1.0 / sv, 0.0);
        }
    }
    Ok(v_t.adjoint() * sigma_inv * u.adjoint())
}

/// Widely linear prediction `x_hat[k] = sum_p H[k,p] beta[p] + H*[k,p] alpha[p]`.
pub fn predict(h: &CMatrix, w: &WidelyLinearWeights) -> Result<CVector> {
    let (_, l) = h.shape();
    if w.beta.len() != l || w.alpha.len() != l {
        return Err(Error::dim(format!(
            "predict: H has {} columns but weights have beta {}, alpha {}",
            l,
            w.beta.len(),
            w.alpha.len()
        )));
    }
    Ok(h * &w.beta + h.conjugate() * &w.alpha)
}
