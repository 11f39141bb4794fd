//! Free-running characteristic sampling and the linearized admittance models
//! built from it.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{OscError, Result};
use crate::oscillator::{inverse_chain_rule, OscillatorModel};

/// Residual below which a point counts as lying on the free-running locus.
pub const FREE_RUNNING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    eta: Vec<f64>,
}

impl SamplingGrid {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.is_empty() {
            return Err(OscError::InvalidParameter("sampling grid is empty".into()));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(OscError::InvalidParameter("sampling grid has non-finite values".into()));
        }
        if eta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OscError::InvalidParameter(
                "sampling grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { eta })
    }

    /// `p` equispaced samples on `[lo, hi]`, endpoints included exactly.
    pub fn equispaced(lo: f64, hi: f64, p: usize) -> Result<Self> {
        match p {
            0 => Err(OscError::InvalidParameter("grid needs at least one sample".into())),
            1 => Self::new(vec![lo]),
            _ => {
                let h = (hi - lo) / (p - 1) as f64;
                let mut eta: Vec<f64> = (0..p).map(|k| lo + h * k as f64).collect();
                eta[p - 1] = hi;
                Self::new(eta)
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.eta
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

/// Free-running point and first-order admittance data at one tuning sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceSample {
    pub eta_c: f64,
    pub v_o: f64,
    pub f_o_hz: f64,
    pub y_v: Complex64,
    pub y_omega: Complex64,
    pub y_eta: Complex64,
    pub i_g1: Complex64,
    pub i_gm1: Complex64,
    /// Set when the finite-difference sanity check flagged cancellation.
    pub warning: Option<String>,
}

impl AdmittanceSample {
    pub fn omega_o(&self) -> f64 {
        2.0 * PI * self.f_o_hz
    }

    /// `(I_Gr, I_Gi)` by the inverse chain rule.
    pub fn injection_gains(&self) -> (Complex64, Complex64) {
        inverse_chain_rule(self.i_g1, self.i_gm1)
    }

    /// First-order Taylor model about this sample.
    pub fn linear_admittance(&self, v: f64, omega: f64, eta: f64) -> Complex64 {
        self.y_v * (v - self.v_o) + self.y_omega * (omega - self.omega_o()) + self.y_eta * (eta - self.eta_c)
    }

    /// Free-running point of the linear model at `eta`.
    pub fn linear_free_running(&self, eta: f64) -> Result<(f64, f64)> {
        let rhs = -self.y_eta * (eta - self.eta_c);
        let m = Matrix2::new(self.y_v.re, self.y_omega.re, self.y_v.im, self.y_omega.im);
        let d = m
            .lu()
            .solve(&Vector2::new(rhs.re, rhs.im))
            .ok_or_else(|| OscError::SingularModel(format!("sample at eta = {} V", self.eta_c)))?;
        Ok((self.v_o + d[0], self.omega_o() + d[1]))
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.eta_c, self.v_o, self.f_o_hz].iter().all(|x| x.is_finite())
            && [self.y_v, self.y_omega, self.y_eta, self.i_g1, self.i_gm1]
                .iter()
                .all(|z| z.is_finite());
        if !finite {
            return Err(OscError::InvalidParameter(format!(
                "sample at eta = {} V has non-finite entries",
                self.eta_c
            )));
        }
        if !(self.v_o > 0.0 && self.f_o_hz > 0.0) {
            return Err(OscError::InvalidParameter(format!(
                "sample at eta = {} V needs positive v_o and f_o",
                self.eta_c
            )));
        }
        Ok(())
    }
}

/// Which sample a tuning voltage is expanded about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// Left end of the enclosing interval.
    #[default]
    Left,
    /// Closest sample, ties going left.
    Nearest,
}

pub const DEFAULT_SANITY_FACTOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseModel {
    samples: Vec<AdmittanceSample>,
    anchor: Anchor,
}

impl PiecewiseModel {
    pub fn new(samples: Vec<AdmittanceSample>, anchor: Anchor, sanity_factor: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(OscError::InvalidParameter(format!(
                "a piecewise model needs at least 2 samples, got {}; use NonPwModel for one",
                samples.len()
            )));
        }
        for s in &samples {
            s.validate()?;
        }
        for w in samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.eta_c <= a.eta_c {
                return Err(OscError::InvalidParameter(format!(
                    "samples not strictly increasing in eta at {} V",
                    b.eta_c
                )));
            }
            let dv = (b.v_o - a.v_o).abs() / a.v_o;
            let df = (b.f_o_hz - a.f_o_hz).abs() / a.f_o_hz;
            if dv >= sanity_factor || df >= sanity_factor {
                return Err(OscError::Inconsistent(format!(
                    "free-running characteristic jumps between eta = {} V and {} V \
                     (dv/v = {dv:.3}, df/f = {df:.3})",
                    a.eta_c, b.eta_c
                )));
            }
        }
        Ok(Self { samples, anchor })
    }

    pub fn samples(&self) -> &[AdmittanceSample] {
        &self.samples
    }

    pub fn anchor_rule(&self) -> Anchor {
        self.anchor
    }

    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].eta_c, self.samples[self.samples.len() - 1].eta_c)
    }

    /// Index of the sample the expansion uses at `eta`.
    pub fn anchor_index(&self, eta: f64) -> Result<usize> {
        let k = locate_interval(self, eta)?;
        Ok(match self.anchor {
            Anchor::Left => k,
            Anchor::Nearest => {
                let (l, r) = (self.samples[k].eta_c, self.samples[k + 1].eta_c);
                if r - eta < eta - l {
                    k + 1
                } else {
                    k
                }
            }
        })
    }
}

/// Interval index `k` with `eta` in `[eta_k, eta_{k+1})`; the upper end of
/// the range maps to the last interval.
pub fn locate_interval(pwm: &PiecewiseModel, eta: f64) -> Result<usize> {
    let (lo, hi) = pwm.range();
    if !(eta >= lo && eta <= hi) {
        return Err(OscError::OutOfRange {
            what: "piecewise model".into(),
            eta,
            lo,
            hi,
        });
    }
    let p = pwm.samples.len();
    let k = pwm.samples.partition_point(|s| s.eta_c <= eta) - 1;
    Ok(k.min(p - 2))
}

pub fn pw_admittance(pwm: &PiecewiseModel, v: f64, omega: f64, eta: f64) -> Result<Complex64> {
    let k = pwm.anchor_index(eta)?;
    Ok(pwm.samples[k].linear_admittance(v, omega, eta))
}

/// Single-sample linearization, valid (nominally) everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct NonPwModel {
    pub sample: AdmittanceSample,
}

impl NonPwModel {
    pub fn new(sample: AdmittanceSample) -> Result<Self> {
        sample.validate()?;
        Ok(Self { sample })
    }

    pub fn admittance(&self, v: f64, omega: f64, eta: f64) -> Complex64 {
        self.sample.linear_admittance(v, omega, eta)
    }
}

/// 2-D damped Newton on `Y(V, omega) = 0` at fixed `eta`.
pub fn solve_free_running(osc: &dyn OscillatorModel, eta: f64, guess: (f64, f64)) -> Result<(f64, f64)> {
    if let Some(g) = osc.small_signal_conductance() {
        if g >= 0.0 {
            return Err(OscError::NoOscillation { conductance: g });
        }
    }
    let (mut v, mut w) = guess;
    if !(v > 0.0 && w > 0.0) {
        return Err(OscError::InvalidParameter(format!(
            "free-running guess must be positive, got ({v}, {w})"
        )));
    }
    let w_scale = w;
    let mut y = osc.admittance(v, w, eta)?;
    const MAX_ITER: usize = 100;
    for _ in 0..MAX_ITER {
        if y.norm() < 1e-14 {
            return Ok((v, w));
        }
        let hv = 1e-7 * v;
        let hw = 1e-7 * w;
        let jv = (osc.admittance(v + hv, w, eta)? - osc.admittance(v - hv, w, eta)?) / (2.0 * hv);
        let jw = (osc.admittance(v, w + hw, eta)? - osc.admittance(v, w - hw, eta)?) / (2.0 * hw) * w_scale;
        let m = Matrix2::new(jv.re, jw.re, jv.im, jw.im);
        let d = m
            .lu()
            .solve(&Vector2::new(-y.re, -y.im))
            .ok_or_else(|| OscError::SingularJacobian("free-running solve".into()))?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let (vt, wt) = (v + lambda * d[0], w + lambda * d[1] * w_scale);
            if vt > 0.0 && wt > 0.0 {
                if let Ok(yt) = osc.admittance(vt, wt, eta) {
                    if yt.norm() < y.norm() {
                        accepted = Some((vt, wt, yt));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((vt, wt, yt)) => {
                v = vt;
                w = wt;
                y = yt;
            }
            // No further decrease possible: roundoff floor.
            None if y.norm() < FREE_RUNNING_TOL => return Ok((v, w)),
            None => break,
        }
    }
    if y.norm() < FREE_RUNNING_TOL {
        return Ok((v, w));
    }
    Err(OscError::NotConverged {
        what: format!("free-running solve at eta = {eta} V"),
        iterations: MAX_ITER,
        residual: y.norm(),
        last_iterate: vec![v, w],
    })
}

/// Finite-difference steps: `h_V = rel_v * v_o`, `h_omega = rel_omega * omega_o`,
/// `h_eta = eta` volts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub rel_v: f64,
    pub rel_omega: f64,
    pub eta: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            rel_v: 1e-4,
            rel_omega: 1e-6,
            eta: 1e-3,
        }
    }
}

/// Relative disagreement between step `h` and `h/2` estimates that flags
/// cancellation.
const RICHARDSON_WARN: f64 = 1e-4;

fn central<F>(f: &F, x: f64, h: f64) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    match (f(x + h), f(x - h)) {
        (Ok(p), Ok(m)) => Ok((p - m) / (2.0 * h)),
        // Lower edge of the oracle domain: one-sided, second order.
        (Ok(p), Err(e)) if e.is_step_rejection() => {
            let p2 = f(x + 2.0 * h)?;
            Ok((-3.0 * f(x)? + 4.0 * p - p2) / (2.0 * h))
        }
        (Err(e), _) => Err(e),
        (_, Err(e)) => Err(e),
    }
}

fn derivative_with_check<F>(f: F, x: f64, h: f64, name: &str, warnings: &mut Vec<String>) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let d1 = central(&f, x, h)?;
    let d2 = central(&f, x, 0.5 * h)?;
    let scale = d1.norm().max(d2.norm());
    if scale > 0.0 && (d1 - d2).norm() > RICHARDSON_WARN * scale {
        warnings.push(format!(
            "{name}: step h and h/2 estimates differ by {:.2e} relative",
            (d1 - d2).norm() / scale
        ));
    }
    Ok(d1)
}

pub fn sample_derivatives(
    osc: &dyn OscillatorModel,
    point: (f64, f64, f64),
    steps: FdSteps,
) -> Result<AdmittanceSample> {
    let (v, w, eta) = point;
    let y0 = osc.admittance(v, w, eta)?;
    if y0.norm() >= FREE_RUNNING_TOL {
        return Err(OscError::Inconsistent(format!(
            "point (V = {v}, omega = {w}, eta = {eta}) is off the free-running locus (|Y| = {:e})",
            y0.norm()
        )));
    }
    let mut warnings = Vec::new();
    let y_v = derivative_with_check(|x| osc.admittance(x, w, eta), v, steps.rel_v * v, "y_v", &mut warnings)?;
    let y_omega = derivative_with_check(
        |x| osc.admittance(v, x, eta),
        w,
        steps.rel_omega * w,
        "y_omega",
        &mut warnings,
    )?;
    let y_eta = derivative_with_check(|x| osc.admittance(v, w, x), eta, steps.eta, "y_eta", &mut warnings)?;
    let (i_g1, i_gm1) = osc.injection_derivatives(v, w, eta);
    Ok(AdmittanceSample {
        eta_c: eta,
        v_o: v,
        f_o_hz: w / (2.0 * PI),
        y_v,
        y_omega,
        y_eta,
        i_g1,
        i_gm1,
        warning: if warnings.is_empty() {
            None
        } else {
            Some(warnings.join("; "))
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionOptions {
    pub steps: FdSteps,
    pub anchor: Anchor,
    pub sanity_factor: f64,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        Self {
            steps: FdSteps::default(),
            anchor: Anchor::Left,
            sanity_factor: DEFAULT_SANITY_FACTOR,
        }
    }
}

/// Free-running solve plus derivatives at one tuning voltage.
pub fn extract_sample(
    osc: &dyn OscillatorModel,
    eta: f64,
    guess: (f64, f64),
    steps: FdSteps,
) -> Result<AdmittanceSample> {
    let annotate = |e: OscError| OscError::Extraction {
        eta,
        source: Box::new(e),
    };
    let (v, w) = solve_free_running(osc, eta, guess).map_err(annotate)?;
    sample_derivatives(osc, (v, w, eta), steps).map_err(annotate)
}

/// Sequential sweep over the grid, each solve warm-started from the last.
pub fn extract_samples(
    osc: &dyn OscillatorModel,
    grid: &SamplingGrid,
    steps: FdSteps,
) -> Result<Vec<AdmittanceSample>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut guess = osc.free_running_guess(grid.values()[0]);
    for &eta in grid.values() {
        let s = extract_sample(osc, eta, guess, steps)?;
        guess = (s.v_o, s.omega_o());
        out.push(s);
    }
    Ok(out)
}

pub fn extract_piecewise(
    osc: &dyn OscillatorModel,
    grid: &SamplingGrid,
    opts: ExtractionOptions,
) -> Result<PiecewiseModel> {
    if grid.len() < 2 {
        return Err(OscError::InvalidParameter(
            "a single-sample grid cannot form a piecewise model; build a NonPwModel instead".into(),
        ));
    }
    let samples = extract_samples(osc, grid, opts.steps)?;
    PiecewiseModel::new(samples, opts.anchor, opts.sanity_factor)
}

pub fn extract_non_pw(osc: &dyn OscillatorModel, eta_c: f64, steps: FdSteps) -> Result<NonPwModel> {
    let s = extract_sample(osc, eta_c, osc.free_running_guess(eta_c), steps)?;
    NonPwModel::new(s)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn model(p: usize) -> PiecewiseModel {
        let g = SamplingGrid::equispaced(2.4, 4.0, p).unwrap();
        let samples = g
            .values()
            .iter()
            .map(|&e| AdmittanceSample {
                eta_c: e,
                v_o: 0.6,
                f_o_hz: 5e9,
                y_v: Complex64::new(0.01, 0.0),
                y_omega: Complex64::new(0.0, 1e-12),
                y_eta: Complex64::new(0.0, -1e-3),
                i_g1: Complex64::new(1.0, 0.0),
                i_gm1: Complex64::new(0.0, 0.0),
                warning: None,
            })
            .collect();
        PiecewiseModel::new(samples, Anchor::Left, 0.2).unwrap()
    }

    proptest! {
        #[test]
        fn locate_interval_is_total(p in 2usize..80, t in 0.0..=1.0f64) {
            let m = model(p);
            let eta = 2.4 + 1.6 * t;
            let k = locate_interval(&m, eta).unwrap();
            let s = m.samples();
            prop_assert!(k <= p - 2);
            prop_assert!(s[k].eta_c <= eta);
            prop_assert!(eta < s[k + 1].eta_c || (k == p - 2 && eta == s[k + 1].eta_c));
            prop_assert_eq!(k, locate_interval(&m, eta).unwrap());
        }

        #[test]
        fn pw_continuous_in_v_and_omega(dv in -1e-6..1e-6f64, dw in -1e3..1e3f64, t in 0.0..=1.0f64) {
            let m = model(9);
            let eta = 2.4 + 1.6 * t;
            let y0 = pw_admittance(&m, 0.5, 3e10, eta).unwrap();
            let y1 = pw_admittance(&m, 0.5 + dv, 3e10 + dw, eta).unwrap();
            prop_assert!((y1 - y0).norm() <= 0.01 * dv.abs() + 1e-12 * dw.abs() + 1e-18);
        }
    }
}
