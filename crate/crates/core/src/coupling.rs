//! Resistively loaded transmission-line coupling between neighbours.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{OscError, Result};

/// Chain (ABCD) parameters of a two-port.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Abcd {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Abcd {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self { a: one, b: zero, c: zero, d: one }
    }

    pub fn series(z: Complex64) -> Self {
        Self { b: z, ..Self::identity() }
    }

    pub fn shunt(y: Complex64) -> Self {
        Self { c: y, ..Self::identity() }
    }

    /// Lossless line of impedance `z0` and electrical length `psi`.
    pub fn line(z0: f64, psi: f64) -> Self {
        let (s, c) = psi.sin_cos();
        Self {
            a: Complex64::new(c, 0.0),
            b: Complex64::new(0.0, z0 * s),
            c: Complex64::new(0.0, s / z0),
            d: Complex64::new(c, 0.0),
        }
    }

    /// Y-parameters `(y11, y12, y21, y22)`. Requires a non-zero B.
    pub fn to_y(&self) -> Result<(Complex64, Complex64, Complex64, Complex64)> {
        if self.b.norm() == 0.0 || !self.b.is_finite() {
            return Err(OscError::SingularModel(
                "two-port has no admittance representation (B = 0)".into(),
            ));
        }
        let det = self.a * self.d - self.b * self.c;
        Ok((self.d / self.b, -det / self.b, -1.0 / self.b, self.a / self.b))
    }
}

impl Mul for Abcd {
    type Output = Abcd;
    fn mul(self, r: Abcd) -> Abcd {
        Abcd {
            a: self.a * r.a + self.b * r.c,
            b: self.a * r.b + self.b * r.d,
            c: self.c * r.a + self.d * r.c,
            d: self.c * r.b + self.d * r.d,
        }
    }
}

/// How the resistors and the line are interconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingTopology {
    /// R_s in series at each end, R_p shunting each end of the line.
    #[default]
    LoadedLine,
    /// R_p shunting each port, R_s in series with the line.
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    pub z_o: f64,
    pub psi_o: f64,
    pub f_ref: f64,
    pub r_s: f64,
    pub r_p: f64,
    pub topology: CouplingTopology,
}

impl CouplingParams {
    pub fn new(
        z_o: f64,
        psi_o: f64,
        f_ref: f64,
        r_s: f64,
        r_p: f64,
        topology: CouplingTopology,
    ) -> Result<Self> {
        for (name, x) in [("z_o", z_o), ("psi_o", psi_o), ("f_ref", f_ref), ("r_s", r_s), ("r_p", r_p)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(OscError::InvalidParameter(format!(
                    "coupling {name} must be positive, got {x}"
                )));
            }
        }
        Ok(Self { z_o, psi_o, f_ref, r_s, r_p, topology })
    }

    /// 50 ohm, 360 degree line at 5.2 GHz with R_s = 1250 ohm, R_p = 300 ohm.
    pub fn reference_design() -> Self {
        Self {
            z_o: 50.0,
            psi_o: 2.0 * PI,
            f_ref: 5.2e9,
            r_s: 1250.0,
            r_p: 300.0,
            topology: CouplingTopology::LoadedLine,
        }
    }

    pub fn omega_ref(&self) -> f64 {
        2.0 * PI * self.f_ref
    }

    pub fn electrical_length(&self, omega: f64) -> f64 {
        self.psi_o * omega / self.omega_ref()
    }

    pub fn abcd(&self, omega: f64) -> Abcd {
        let psi = self.electrical_length(omega);
        let rs = Abcd::series(Complex64::new(self.r_s, 0.0));
        let rp = Abcd::shunt(Complex64::new(1.0 / self.r_p, 0.0));
        match self.topology {
            CouplingTopology::LoadedLine => rs * rp * Abcd::line(self.z_o, psi) * rp * rs,
            CouplingTopology::Pi => {
                // Series branch first, split around R_s to keep it symmetric.
                let half = Abcd::line(self.z_o, 0.5 * psi);
                let branch = half * rs * half;
                rp * branch * rp
            }
        }
    }
}

/// `(Y11, Y12)` of the symmetric coupling network at `omega`.
pub fn coupling_two_port(cp: &CouplingParams, omega: f64) -> Result<(Complex64, Complex64)> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(OscError::Domain(format!("frequency must be positive, got {omega}")));
    }
    let (y11, y12, _, _) = cp.abcd(omega).to_y()?;
    Ok((y11, y12))
}

/// Tridiagonal N x N coupling matrix: `2 Y11` on the diagonal, `Y12` beside it.
pub fn coupling_matrix(cp: &CouplingParams, n: usize, omega: f64) -> Result<DMatrix<Complex64>> {
    if n < 2 {
        return Err(OscError::InvalidParameter(format!(
            "coupling matrix needs at least 2 oscillators, got {n}"
        )));
    }
    let (y11, y12) = coupling_two_port(cp, omega)?;
    let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        m[(i, i)] = 2.0 * y11;
        if i + 1 < n {
            m[(i, i + 1)] = y12;
            m[(i + 1, i)] = y12;
        }
    }
    Ok(m)
}
