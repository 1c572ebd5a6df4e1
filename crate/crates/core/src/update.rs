//! Kalman measurement update with Mahalanobis gating and Joseph-form covariance.

use crate::error::{Error, Result};
use crate::measurement::Residual;
use crate::state::{ErrorCovariance, FilterState};
use nalgebra::{DMatrix, DVector, Matrix6};
use serde::{Deserialize, Serialize};

/// Innovation-covariance condition number above which a warning is logged.
pub const CONDITION_WARNING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub confidence: f64,
    pub dof: u32,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { confidence: 0.95, dof: 6 }
    }
}

impl GateConfig {
    pub fn threshold(&self) -> Result<f64> {
        chi2_threshold(self.confidence, self.dof)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    pub chi2: f64,
}

/// Natural log of the gamma function (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
fn lower_gamma_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..10_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp()
    } else {
        // continued fraction for Q(a, x) (modified Lentz)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (log_prefix + h.ln()).exp()
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    lower_gamma_regularized(0.5 * dof as f64, 0.5 * x)
}

/// Inverse χ² CDF: the value below which a fraction `confidence` of the mass lies.
pub fn chi2_threshold(confidence: f64, dof: u32) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::OutOfRange { name: "confidence", value: confidence });
    }
    if dof == 0 {
        return Err(Error::OutOfRange { name: "dof", value: 0.0 });
    }
    let mut hi = dof as f64;
    while chi2_cdf(hi, dof) < confidence {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of an accepted correction: error-state step, posterior covariance.
#[derive(Debug, Clone)]
pub struct Correction {
    pub dx: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
}

/// Generic gated Kalman correction on raw matrices.
///
/// Returns `Ok(None)` with the χ² when the innovation fails the gate.
pub fn kalman_correction(
    p: &DMatrix<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    threshold: f64,
) -> Result<(f64, Option<Correction>)> {
    let n = p.nrows();
    let m = y.len();
    if h.shape() != (m, n) {
        return Err(Error::DimensionMismatch { expected: n, found: h.ncols() });
    }
    if r.shape() != (m, m) {
        return Err(Error::DimensionMismatch { expected: m, found: r.nrows() });
    }
    let ph_t = p * h.transpose();
    let mut s = h * &ph_t + r;
    s = 0.5 * (&s + s.transpose());
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::InnovationNotPositiveDefinite { camera: None })?;
    let l_diag = chol.l_dirty().diagonal();
    let cond = (l_diag.max() / l_diag.min()).powi(2);
    if cond > CONDITION_WARNING {
        log::warn!("innovation covariance condition number {cond:.3e}");
    }
    let whitened = chol.l().solve_lower_triangular(y).expect("cholesky factor is invertible");
    let chi2 = whitened.norm_squared();
    if !(chi2 <= threshold) {
        return Ok((chi2, None));
    }
    // K = P Hᵀ S⁻¹  ⇔  S Kᵀ = H P
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let dx = &gain * y;
    let i_kh = DMatrix::identity(n, n) - &gain * h;
    let mut cov = &i_kh * p * i_kh.transpose() + &gain * r * gain.transpose();
    cov = 0.5 * (&cov + cov.transpose());
    Ok((chi2, Some(Correction { dx, covariance: cov, chi2 })))
}

/// Gated update of the calibration filter. Rejected measurements leave
/// `state` and `cov` untouched.
pub fn kalman_update(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    residual: &Residual,
    h: &DMatrix<f64>,
    r_meas: &Matrix6<f64>,
    threshold: f64,
) -> Result<UpdateOutcome> {
    if cov.dim() != state.error_dim() {
        return Err(Error::DimensionMismatch { expected: state.error_dim(), found: cov.dim() });
    }
    let y = DVector::from_column_slice(residual.vector().as_slice());
    let r = DMatrix::from_column_slice(6, 6, r_meas.as_slice());
    let (chi2, correction) = kalman_correction(cov.matrix(), &y, h, &r, threshold)?;
    match correction {
        None => Ok(UpdateOutcome { accepted: false, chi2 }),
        Some(c) => {
            *state = state.compose(&c.dx)?;
            *cov.matrix_mut() = c.covariance;
            cov.symmetrize();
            Ok(UpdateOutcome { accepted: true, chi2 })
        }
    }
}
