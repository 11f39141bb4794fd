//! Eigenvalues of small dense real matrices.
//!
//! The matrix is balanced (Parlett-Reinsch, powers of two so no rounding is
//! introduced) and handed to nalgebra's real Schur decomposition.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{OscError, Result};

const RADIX: f64 = 2.0;

/// Diagonal similarity scaling in place; returns the scale factors.
pub fn balance(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut d = vec![1.0; n];
    let sq = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sq;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sq;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
    d
}

/// All eigenvalues, sorted by descending real part then descending
/// imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() != m.ncols() {
        return Err(OscError::InvalidParameter("eigenvalues of a non-square matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(OscError::InvalidParameter("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut b = m.clone();
    balance(&mut b);
    let schur = nalgebra::linalg::Schur::try_new(b, f64::EPSILON, 1000 * m.nrows()).ok_or_else(|| OscError::NotConverged {
        what: "QR eigenvalue iteration".into(),
        iterations: 1000 * m.nrows(),
        residual: f64::NAN,
        last_iterate: Vec::new(),
    })?;
    let mut ev: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    sort_eigenvalues(&mut ev);
    Ok(ev)
}

pub fn sort_eigenvalues(ev: &mut [Complex64]) {
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}
