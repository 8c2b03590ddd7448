//! Polygonal-coordinate algebra: the tridiagonal Hermitian area form on the
//! period coordinates of a flat cone sphere, its determinant identity, and
//! the induced volume-form density. This is a diagnostic surface for the
//! recurrence pipeline; nothing downstream depends on it.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThurstonError {
    #[error("bad defect list: {0}")]
    BadDefectList(String),
    #[error("vector length {got} does not match form dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("area form is not positive at this point: {0}")]
    NonPositiveArea(f64),
}

/// The Hermitian matrix of the area form in polygonal coordinates, stored
/// tridiagonally: `H[k][k] = −(c_k + c_{k+1})/4`, `H[k][k+1] = −(c_{k+1} − i)/4`
/// with `c_i = cot(α_i/2)`.
#[derive(Debug, Clone)]
pub struct AreaForm {
    defects: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<Complex64>,
}

impl AreaForm {
    pub fn defects(&self) -> &[f64] {
        &self.defects
    }

    /// Dimension of the form (n − 2 for n cone points).
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[Complex64] {
        &self.upper
    }

    /// Dense matrix, mostly for tests.
    pub fn dense(&self) -> Vec<Vec<Complex64>> {
        let m = self.dim();
        let mut out = vec![vec![Complex64::new(0.0, 0.0); m]; m];
        for k in 0..m {
            out[k][k] = Complex64::new(self.diag[k], 0.0);
            if k + 1 < m {
                out[k][k + 1] = self.upper[k];
                out[k + 1][k] = self.upper[k].conj();
            }
        }
        out
    }

    /// Determinant by the three-term recurrence for Hermitian tridiagonal
    /// matrices (real by symmetry).
    pub fn det(&self) -> f64 {
        let m = self.dim();
        let mut d_prev = 1.0;
        let mut d = self.diag[0];
        for k in 1..m {
            let off2 = self.upper[k - 1].norm_sqr();
            let d_next = self.diag[k] * d - off2 * d_prev;
            d_prev = d;
            d = d_next;
        }
        d
    }
}

/// Build the area form for a full defect list (all cone points, sum 4π,
/// each defect in (0, 2π)).
pub fn hermitian_matrix(defects: &[f64]) -> Result<AreaForm, ThurstonError> {
    let n = defects.len();
    if n < 3 {
        return Err(ThurstonError::BadDefectList(format!(
            "need at least 3 cone points, got {n}"
        )));
    }
    for &d in defects {
        if !(d > 0.0 && d < 2.0 * std::f64::consts::PI) {
            return Err(ThurstonError::BadDefectList(format!(
                "defect {d} outside (0, 2*pi)"
            )));
        }
    }
    let sum: f64 = defects.iter().sum();
    if (sum - 4.0 * std::f64::consts::PI).abs() > 1e-12 {
        return Err(ThurstonError::BadDefectList(format!(
            "defects sum to {sum}, expected 4*pi"
        )));
    }
    let c: Vec<f64> = defects.iter().map(|d| 1.0 / (d / 2.0).tan()).collect();
    let m = n - 2;
    let diag: Vec<f64> = (0..m).map(|k| -(c[k] + c[k + 1]) / 4.0).collect();
    let upper: Vec<Complex64> = (0..m - 1)
        .map(|k| Complex64::new(-c[k + 1] / 4.0, 0.25))
        .collect();
    Ok(AreaForm {
        defects: defects.to_vec(),
        diag,
        upper,
    })
}

/// Check `det H` against the closed form
/// `(−1)^{n−1} sin(αₙ/2) / (4^{n−2} sin(α₁/2)⋯sin(α_{n−1}/2))`.
pub fn det_identity_check(defects: &[f64]) -> Result<(Complex64, Complex64, bool), ThurstonError> {
    let form = hermitian_matrix(defects)?;
    let lhs = form.det();
    let n = defects.len();
    let sign = if (n - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut denom = 4.0_f64.powi(n as i32 - 2);
    for &d in &defects[..n - 1] {
        denom *= (d / 2.0).sin();
    }
    let rhs = sign * (defects[n - 1] / 2.0).sin() / denom;
    let ok = (lhs - rhs).abs() <= 1e-10 * rhs.abs();
    Ok((Complex64::new(lhs, 0.0), Complex64::new(rhs, 0.0), ok))
}

/// The quadratic form `z H z̄ᵀ` (conjugation on the second slot); real up to
/// rounding by Hermitian symmetry, the imaginary residual is checked and
/// discarded.
pub fn area_value(form: &AreaForm, z: &[Complex64]) -> Result<f64, ThurstonError> {
    if z.len() != form.dim() {
        return Err(ThurstonError::DimensionMismatch {
            got: z.len(),
            want: form.dim(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    let m = form.dim();
    for k in 0..m {
        acc += z[k] * form.diag[k] * z[k].conj();
        if k + 1 < m {
            acc += z[k] * form.upper[k] * z[k + 1].conj();
            acc += z[k + 1] * form.upper[k].conj() * z[k].conj();
        }
    }
    let scale = z.iter().map(|v| v.norm_sqr()).sum::<f64>().max(1.0);
    debug_assert!(
        acc.im.abs() <= 1e-12 * scale,
        "imaginary residual {} exceeds tolerance",
        acc.im
    );
    Ok(acc.re)
}

/// Volume-form density `|det H| / ((y,1) H (ȳ,1)ᵀ)^{n−2}` in the homogeneous
/// chart, with the wedge normalization folded into a fixed constant.
pub fn volume_density(form: &AreaForm, y: &[Complex64]) -> Result<f64, ThurstonError> {
    if y.len() + 1 != form.dim() {
        return Err(ThurstonError::DimensionMismatch {
            got: y.len(),
            want: form.dim() - 1,
        });
    }
    let mut z: Vec<Complex64> = y.to_vec();
    z.push(Complex64::new(1.0, 0.0));
    let a = area_value(form, &z)?;
    if a <= 0.0 {
        return Err(ThurstonError::NonPositiveArea(a));
    }
    let n_minus_2 = form.dim() as i32;
    Ok(form.det().abs() / a.powi(n_minus_2))
}
