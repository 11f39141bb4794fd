//! Analytic Van der Pol oscillator with a varactor-tuned tank.
//!
//! The active device is the cubic current source `i(v) = a v + b v^3`, whose
//! first-harmonic describing function is `a + 3/4 b V^2`. The tank is a
//! parallel L and a reverse-biased junction capacitance. An optional series
//! capacitor separates the core from the output node, where the load sits.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{OscError, Result};

/// One-port first-harmonic admittance oracle.
pub trait OscillatorModel: Send + Sync + std::fmt::Debug {
    /// Admittance seen at the output node for amplitude `v`, angular
    /// frequency `omega` and tuning voltage `eta`.
    fn admittance(&self, v: f64, omega: f64, eta: f64) -> Result<Complex64>;

    /// Sensitivities `(I_G1, I_G-1)` of the node current to the injection
    /// phasor and its conjugate.
    fn injection_derivatives(&self, v: f64, omega: f64, eta: f64) -> (Complex64, Complex64);

    /// Starting point `(V, omega)` for the free-running solve at `eta`.
    fn free_running_guess(&self, eta: f64) -> (f64, f64);

    /// Small-signal net conductance, when the model knows it. Non-negative
    /// values mean no oscillation can build up.
    fn small_signal_conductance(&self) -> Option<f64> {
        None
    }
}

/// Abrupt/graded junction capacitance `c_jo / (1 + eta/v_bi)^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaractorModel {
    pub c_jo: f64,
    pub m: f64,
    pub v_bi: f64,
}

impl VaractorModel {
    pub fn new(c_jo: f64, m: f64, v_bi: f64) -> Result<Self> {
        for (name, x) in [("c_jo", c_jo), ("m", m), ("v_bi", v_bi)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(OscError::InvalidParameter(format!(
                    "varactor {name} must be positive, got {x}"
                )));
            }
        }
        Ok(Self { c_jo, m, v_bi })
    }

    pub fn capacitance(&self, eta: f64) -> Result<f64> {
        varactor_capacitance(self, eta)
    }

    /// dC/d eta.
    pub fn capacitance_slope(&self, eta: f64) -> Result<f64> {
        let c = self.capacitance(eta)?;
        Ok(-self.m * c / (self.v_bi + eta))
    }
}

pub fn varactor_capacitance(v: &VaractorModel, eta: f64) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(OscError::Domain(format!(
            "varactor bias eta = {eta} V is negative (forward bias is not modelled)"
        )));
    }
    Ok(v.c_jo / (1.0 + eta / v.v_bi).powf(v.m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdpParams {
    pub a: f64,
    pub b: f64,
    pub l: f64,
    pub varactor: VaractorModel,
    pub c_out: Option<f64>,
    pub g_load: f64,
}

pub const REF_A: f64 = -0.023;
pub const REF_B: f64 = 0.01;
pub const REF_L: f64 = 1.53e-9;
pub const REF_C_JO: f64 = 0.72e-12;
pub const REF_M: f64 = 0.5;
pub const REF_G_LOAD: f64 = 1.0 / 50.0;
pub const REF_ETA: f64 = 2.5;
pub const REF_FREQ_HZ: f64 = 5.2e9;

impl VdpParams {
    pub fn new(
        a: f64,
        b: f64,
        l: f64,
        varactor: VaractorModel,
        c_out: Option<f64>,
        g_load: f64,
    ) -> Result<Self> {
        if !(a < 0.0) {
            return Err(OscError::InvalidParameter(format!("a must be negative, got {a}")));
        }
        if !(b > 0.0) {
            return Err(OscError::InvalidParameter(format!("b must be positive, got {b}")));
        }
        if !(l > 0.0) {
            return Err(OscError::InvalidParameter(format!("l must be positive, got {l}")));
        }
        if !(g_load >= 0.0) {
            return Err(OscError::InvalidParameter(format!(
                "g_load must be non-negative, got {g_load}"
            )));
        }
        if let Some(c) = c_out {
            if !(c > 0.0 && c.is_finite()) {
                return Err(OscError::InvalidParameter(format!(
                    "c_out must be positive, got {c}"
                )));
            }
        }
        if a.abs() <= g_load {
            return Err(OscError::NoOscillation {
                conductance: a + g_load,
            });
        }
        Ok(Self {
            a,
            b,
            l,
            varactor,
            c_out,
            g_load,
        })
    }

    /// The reference testbed: a = -23 mS, b = 10 mA/V^3, L = 1.53 nH,
    /// C_jo = 0.72 pF, M = 0.5, 50 ohm load, with v_bi calibrated so that the
    /// bare oscillator runs at 5.2 GHz for eta = 2.5 V.
    pub fn reference_design(c_out: Option<f64>) -> Result<Self> {
        let v_bi = calibrate_v_bi(REF_C_JO, REF_M, REF_L, REF_ETA, REF_FREQ_HZ)?;
        let varactor = VaractorModel::new(REF_C_JO, REF_M, v_bi)?;
        Self::new(REF_A, REF_B, REF_L, varactor, c_out, REF_G_LOAD)
    }

    /// Amplitude at which the core conductance cancels the load.
    pub fn bare_amplitude(&self) -> f64 {
        (4.0 * (self.a.abs() - self.g_load) / (3.0 * self.b)).sqrt()
    }

    /// Tank resonance 1/sqrt(L C(eta)).
    pub fn resonance(&self, eta: f64) -> Result<f64> {
        Ok(1.0 / (self.l * self.varactor.capacitance(eta)?).sqrt())
    }

    /// Core admittance without the load conductance.
    fn active_admittance(&self, v_core: f64, omega: f64, eta: f64) -> Result<Complex64> {
        let c = self.varactor.capacitance(eta)?;
        Ok(Complex64::new(
            self.a + 0.75 * self.b * v_core * v_core,
            omega * c - 1.0 / (omega * self.l),
        ))
    }
}

/// Bisection for the junction potential that puts the bare tank resonance at
/// `f_target` for bias `eta`.
pub fn calibrate_v_bi(c_jo: f64, m: f64, l: f64, eta: f64, f_target: f64) -> Result<f64> {
    if !(c_jo > 0.0 && m > 0.0 && l > 0.0 && eta > 0.0 && f_target > 0.0) {
        return Err(OscError::InvalidParameter(
            "calibration needs positive c_jo, m, l, eta and target frequency".into(),
        ));
    }
    // f rises monotonically as v_bi shrinks.
    let f = |v_bi: f64| 1.0 / (2.0 * PI * (l * c_jo / (1.0 + eta / v_bi).powf(m)).sqrt());
    let (mut lo, mut hi) = (1e-3, 1e4);
    if !(f(lo) > f_target && f(hi) < f_target) {
        return Err(OscError::InvalidParameter(format!(
            "target frequency {f_target} Hz not reachable by any v_bi in [{lo}, {hi}] V"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > f_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_point(v: f64, omega: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(OscError::Domain(format!("amplitude must be positive, got {v}")));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(OscError::Domain(format!("frequency must be positive, got {omega}")));
    }
    Ok(())
}

pub fn vdp_core_admittance(p: &VdpParams, v_core: f64, omega: f64, eta: f64) -> Result<Complex64> {
    check_point(v_core, omega)?;
    Ok(p.active_admittance(v_core, omega, eta)? + p.g_load)
}

const INNER_MAX_ITER: usize = 100;

/// Admittance at the output node. With a series output capacitor the core
/// amplitude follows from the capacitive divider, found by fixed point.
pub fn node_admittance(p: &VdpParams, v_node: f64, omega: f64, eta: f64) -> Result<Complex64> {
    let Some(c_out) = p.c_out else {
        return vdp_core_admittance(p, v_node, omega, eta);
    };
    check_point(v_node, omega)?;
    let yc = Complex64::new(0.0, omega * c_out);
    let ratio = |vc: f64| -> Result<f64> {
        let ya = p.active_admittance(vc, omega, eta)?;
        Ok((yc / (ya + yc)).norm())
    };

    let mut vc = v_node;
    let mut last_step = f64::INFINITY;
    let mut relax = 1.0;
    let mut converged = false;
    for _ in 0..INNER_MAX_ITER {
        let target = v_node * ratio(vc)?;
        let step = target - vc;
        if step.abs() > last_step {
            relax *= 0.5;
        }
        vc += relax * step;
        last_step = step.abs();
        if step.abs() <= 1e-15 * v_node {
            converged = true;
            break;
        }
    }
    if !converged {
        let residual = (v_node * ratio(vc)? - vc).abs();
        if residual > 1e-12 * v_node {
            return Err(OscError::NotConverged {
                what: "series-capacitor core amplitude".into(),
                iterations: INNER_MAX_ITER,
                residual,
                last_iterate: vec![vc],
            });
        }
    }
    let ya = p.active_admittance(vc, omega, eta)?;
    Ok(p.g_load + ya * yc / (ya + yc))
}

/// Chain rule from the (G^r, G^i) sensitivities to the phasor pair.
pub fn chain_rule(i_gr: Complex64, i_gi: Complex64) -> (Complex64, Complex64) {
    let j = Complex64::i();
    (0.5 * (i_gr - j * i_gi), 0.5 * (i_gr + j * i_gi))
}

/// Inverse of [`chain_rule`].
pub fn inverse_chain_rule(i_g1: Complex64, i_gm1: Complex64) -> (Complex64, Complex64) {
    (i_g1 + i_gm1, Complex64::i() * (i_g1 - i_gm1))
}

pub fn injection_phasor_derivatives(
    osc: &dyn OscillatorModel,
    v: f64,
    omega: f64,
    eta: f64,
) -> (Complex64, Complex64) {
    osc.injection_derivatives(v, omega, eta)
}

impl OscillatorModel for VdpParams {
    fn admittance(&self, v: f64, omega: f64, eta: f64) -> Result<Complex64> {
        node_admittance(self, v, omega, eta)
    }

    fn injection_derivatives(&self, _v: f64, _omega: f64, _eta: f64) -> (Complex64, Complex64) {
        // The source is attached at the node: dI/dG^r = 1, dI/dG^i = j.
        chain_rule(Complex64::new(1.0, 0.0), Complex64::i())
    }

    fn free_running_guess(&self, eta: f64) -> (f64, f64) {
        let w = self.resonance(eta.max(0.0)).unwrap_or(1.0 / (self.l * self.varactor.c_jo).sqrt());
        (self.bare_amplitude(), w)
    }

    fn small_signal_conductance(&self) -> Option<f64> {
        Some(self.a + self.g_load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vdp(c_out: Option<f64>) -> VdpParams {
        VdpParams::reference_design(c_out).unwrap()
    }

    #[test]
    fn zero_bias_capacitance_is_c_jo() {
        let v = VaractorModel::new(0.72e-12, 0.5, 3.3).unwrap();
        assert_eq!(v.capacitance(0.0).unwrap(), 0.72e-12);
    }

    #[test]
    fn capacitance_at_three_volts_halves() {
        let v = VaractorModel::new(0.72e-12, 0.5, 1.0).unwrap();
        assert_relative_eq!(v.capacitance(3.0).unwrap(), 0.36e-12, max_relative = 1e-15);
    }

    #[test]
    fn forward_bias_is_a_domain_error() {
        let v = VaractorModel::new(0.72e-12, 0.5, 1.0).unwrap();
        assert!(matches!(v.capacitance(-0.1), Err(OscError::Domain(_))));
    }

    #[test]
    fn calibrated_v_bi_matches_closed_form() {
        // Invert C(2.5) = 1/(w^2 L) for v_bi directly.
        let w = 2.0 * PI * REF_FREQ_HZ;
        let c_target = 1.0 / (w * w * REF_L);
        let closed = REF_ETA / ((REF_C_JO / c_target).powf(1.0 / REF_M) - 1.0);
        let p = vdp(None);
        assert_relative_eq!(p.varactor.v_bi, closed, max_relative = 1e-12);
        assert_relative_eq!(p.resonance(REF_ETA).unwrap() / (2.0 * PI), REF_FREQ_HZ, max_relative = 1e-12);
    }

    #[test]
    fn core_admittance_vanishes_at_free_running_point() {
        let p = vdp(None);
        let w = p.resonance(REF_ETA).unwrap();
        let y = vdp_core_admittance(&p, 0.4f64.sqrt(), w, REF_ETA).unwrap();
        assert!(y.norm() < 1e-15, "{y}");
    }

    #[test]
    fn small_signal_limit_is_net_negative_conductance() {
        let p = vdp(None);
        let w = p.resonance(REF_ETA).unwrap();
        let y = vdp_core_admittance(&p, 1e-9, w, REF_ETA).unwrap();
        assert_relative_eq!(y.re, -0.003, max_relative = 1e-12);
        assert!(y.im.abs() < 1e-15);
    }

    #[test]
    fn imaginary_part_increases_with_frequency() {
        let p = vdp(None);
        let mut last = f64::NEG_INFINITY;
        for k in 0..200 {
            let w = 2.0 * PI * (1e9 + 5e7 * k as f64);
            let y = vdp_core_admittance(&p, 0.5, w, 1.0).unwrap();
            assert!(y.im > last);
            last = y.im;
        }
    }

    #[test]
    fn describing_function_matches_fourier_integral() {
        let p = vdp(None);
        let n = 4096;
        for &amp in &[0.05, 0.3, 0.63, 1.7] {
            // First cosine coefficient of i(V cos t), trapezoid rule (exact
            // for trigonometric polynomials of low degree).
            let mut acc = 0.0;
            for k in 0..n {
                let t = 2.0 * PI * k as f64 / n as f64;
                let v = amp * t.cos();
                acc += (p.a * v + p.b * v * v * v) * t.cos();
            }
            let i1 = 2.0 * acc / n as f64;
            let g = vdp_core_admittance(&p, amp, 3e10, 2.5).unwrap().re - p.g_load;
            assert_relative_eq!(g, i1 / amp, max_relative = 1e-10);
        }
    }

    #[test]
    fn node_admittance_without_c_out_is_core_admittance() {
        let p = vdp(None);
        for &(v, w, e) in &[(0.1, 3e10, 2.4), (0.7, 3.3e10, 3.9), (1.2, 3.1e10, 0.0)] {
            assert_eq!(
                node_admittance(&p, v, w, e).unwrap(),
                vdp_core_admittance(&p, v, w, e).unwrap()
            );
        }
    }

    #[test]
    fn huge_series_capacitor_is_a_short() {
        let p = vdp(Some(1.0));
        let q = vdp(None);
        let w = 2.0 * PI * 5e9;
        for &v in &[0.2, 0.6, 0.9] {
            let a = node_admittance(&p, v, w, 2.5).unwrap();
            let b = vdp_core_admittance(&q, v, w, 2.5).unwrap();
            assert!((a - b).norm() <= 1e-6 * b.norm(), "{a} vs {b}");
        }
    }

    #[test]
    fn series_capacitor_divider_is_self_consistent() {
        let p = vdp(Some(10e-12));
        let (v, w, e) = (0.55, 2.0 * PI * 5.05e9, 3.0);
        let y = node_admittance(&p, v, w, e).unwrap();
        // Recover the core admittance from the node value and check the
        // divider relation it implies.
        let yc = Complex64::new(0.0, w * 10e-12);
        let ys = y - p.g_load;
        let ya = ys * yc / (yc - ys);
        let vc = ((ya.re - p.a) / (0.75 * p.b)).sqrt();
        assert_relative_eq!(vc, v * (yc / (ya + yc)).norm(), max_relative = 1e-10);
        let c = p.varactor.capacitance(e).unwrap();
        assert_relative_eq!(ya.im, w * c - 1.0 / (w * p.l), max_relative = 1e-9);
    }

    #[test]
    fn constructor_rejects_lossy_oscillator() {
        let v = VaractorModel::new(1e-12, 0.5, 1.0).unwrap();
        assert!(matches!(
            VdpParams::new(-0.01, 0.01, 1e-9, v, None, 0.02),
            Err(OscError::NoOscillation { .. })
        ));
        assert!(VdpParams::new(0.01, 0.01, 1e-9, v, None, 0.0).is_err());
    }

    #[test]
    fn vdp_injection_is_direct() {
        let p = vdp(Some(10e-12));
        let (g1, gm1) = injection_phasor_derivatives(&p, 0.5, 3e10, 2.0);
        assert_eq!(g1, Complex64::new(1.0, 0.0));
        assert_eq!(gm1, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn chain_rule_on_stored_pair() {
        let gr = Complex64::new(0.8, 0.0);
        let gi = Complex64::new(0.0, 1.1);
        let (g1, gm1) = chain_rule(gr, gi);
        assert_relative_eq!(g1.re, 0.5 * (0.8 + 1.1), max_relative = 1e-15);
        assert_relative_eq!(gm1.re, 0.5 * (0.8 - 1.1), max_relative = 1e-15);
        let (r, i) = inverse_chain_rule(g1, gm1);
        assert!((r - gr).norm() < 1e-15 && (i - gi).norm() < 1e-15);
    }
}
