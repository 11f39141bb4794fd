//! Small-signal stability of synchronized solutions.
//!
//! Amplitude and phase perturbations `(dv_i, dphi_i)` enter the envelope
//! equation of oscillator `i` as
//! `dR_i + Y_omega V_i (dphi_i' - j dv_i'/V_i) = 0`, so with
//! `S_i = -dR_i / (Y_omega V_i)` the rates are `dphi_i' = Re S_i` and
//! `dv_i' = -V_i Im S_i`. Time is normalized by the reference frequency.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{solve_constant_phase, ArraySpec, InjectionSource, SolveOptions, SweepCurve, SynchronizedSolution};
use crate::coupling::coupling_matrix;
use crate::eigen::eigenvalues;
use crate::error::{OscError, Result};

/// Perturbation matrix ordered `[dv_0..dv_{N-1}, dphi_0..dphi_{N-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityMatrix {
    pub a: DMatrix<f64>,
    pub n: usize,
}

/// Linearization of the complex residuals at a solution.
#[derive(Debug, Clone)]
pub struct Partials {
    /// `dR_i / dV_n`.
    pub dv: DMatrix<Complex64>,
    /// `dR_i / dphi_n`.
    pub dphi: DMatrix<Complex64>,
    /// `Y_omega * omega_ref` per oscillator.
    pub y_omega: Vec<Complex64>,
    pub v: Vec<f64>,
}

/// Below this `|Y_omega omega_ref|` (siemens) an oscillator has no usable
/// frequency sensitivity.
const Y_OMEGA_FLOOR: f64 = 1e-12;

pub fn residual_partials(spec: &ArraySpec, inj: &InjectionSource, sol: &SynchronizedSolution) -> Result<Partials> {
    let n = spec.n();
    let anchors = spec.anchors(&sol.eta)?;
    if anchors != sol.k_vec {
        return Err(OscError::Inconsistent(format!(
            "stale interval indices {:?}, expected {:?}",
            sol.k_vec, anchors
        )));
    }
    let w = sol.omega_s;
    let c = coupling_matrix(&spec.coupling, n, w)?;
    let j = Complex64::i();
    let zero = Complex64::new(0.0, 0.0);
    let mut dv = DMatrix::from_element(n, n, zero);
    let mut dphi = DMatrix::from_element(n, n, zero);
    let mut y_omega = Vec::with_capacity(n);
    for i in 0..n {
        let m = &spec.models[i];
        let (vi, ei, phi_i) = (sol.v[i], sol.eta[i], sol.phi[i]);
        let y = m.admittance(vi, w, ei, anchors[i])?;
        let (yv, yw) = m.partials(vi, w, ei, anchors[i])?;
        let yw = yw * spec.omega_ref();
        if yw.norm() < Y_OMEGA_FLOOR {
            return Err(OscError::SingularModel(format!(
                "oscillator {i} has no frequency sensitivity (|Y_omega| = {:e})",
                yw.norm()
            )));
        }
        y_omega.push(yw);
        dv[(i, i)] = yv * vi + y + c[(i, i)];
        let mut self_phase = zero;
        for k in 0..n {
            if k == i || c[(i, k)] == zero {
                continue;
            }
            let e = Complex64::from_polar(1.0, sol.phi[k] - phi_i);
            dv[(i, k)] = c[(i, k)] * e;
            dphi[(i, k)] = j * c[(i, k)] * sol.v[k] * e;
            self_phase -= j * c[(i, k)] * sol.v[k] * e;
        }
        if i == spec.q && inj.i_s != 0.0 {
            let (gr, gi) = m.injection_gains(vi, w, ei, anchors[i])?;
            let t = inj.theta_s - phi_i;
            self_phase += inj.i_s * (gr * t.sin() - gi * t.cos());
        }
        dphi[(i, i)] = self_phase;
    }
    Ok(Partials {
        dv,
        dphi,
        y_omega,
        v: sol.v.clone(),
    })
}

/// Rates `[dv', dphi']` produced by the perturbation `dx = [dv, dphi]`.
pub fn perturbation_rate(p: &Partials, dx: &[f64]) -> Vec<f64> {
    let n = p.v.len();
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let mut dr = Complex64::new(0.0, 0.0);
        for k in 0..n {
            dr += p.dv[(i, k)] * dx[k] + p.dphi[(i, k)] * dx[n + k];
        }
        let s = -dr / (p.y_omega[i] * p.v[i]);
        out[i] = -p.v[i] * s.im;
        out[n + i] = s.re;
    }
    out
}

pub fn assemble_stability_matrix(
    spec: &ArraySpec,
    inj: &InjectionSource,
    sol: &SynchronizedSolution,
) -> Result<StabilityMatrix> {
    let p = residual_partials(spec, inj, sol)?;
    let n = spec.n();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut e = vec![0.0; 2 * n];
    for col in 0..2 * n {
        e[col] = 1.0;
        for (row, v) in perturbation_rate(&p, &e).into_iter().enumerate() {
            a[(row, col)] = v;
        }
        e[col] = 0.0;
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(OscError::Inconsistent("perturbation matrix has non-finite entries".into()));
    }
    Ok(StabilityMatrix { a, n })
}

/// Relative size of the structural zero mode.
pub const ZERO_MODE_TOL: f64 = 1e-6;
/// Relative stability margin on the real parts.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    /// Descending real part.
    pub eigenvalues: Vec<Complex64>,
    pub max_re_nonstructural: f64,
    pub structural_zero_present: bool,
    /// Eigenvalues with `|lambda|` below the zero-mode tolerance.
    pub near_zero_count: usize,
    pub stable: bool,
    pub matrix_norm: f64,
}

/// Stability verdict from a spectrum. `scale` is the Frobenius norm of the
/// matrix the spectrum belongs to.
pub fn classify_stability(eigs: &[Complex64], free_running: bool, scale: f64) -> Result<StabilityResult> {
    let zero_tol = ZERO_MODE_TOL * scale;
    for l in eigs {
        let partner = eigs.iter().map(|e| (e - l.conj()).norm()).fold(f64::INFINITY, f64::min);
        if partner > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(OscError::Inconsistent(format!("spectrum not closed under conjugation at {l}")));
        }
    }
    let mut eigenvalues = eigs.to_vec();
    crate::eigen::sort_eigenvalues(&mut eigenvalues);
    let near_zero_count = eigenvalues.iter().filter(|l| l.norm() < zero_tol).count();
    let mut skip = None;
    if free_running {
        let (idx, l) = eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .ok_or_else(|| OscError::Inconsistent("empty spectrum".into()))?;
        if !(l.norm() < zero_tol) {
            return Err(OscError::Inconsistent(format!(
                "free-running solution without structural zero mode (smallest |lambda| = {:e})",
                l.norm()
            )));
        }
        skip = Some(idx);
    }
    let max_re = eigenvalues
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, l)| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityResult {
        eigenvalues,
        max_re_nonstructural: max_re,
        structural_zero_present: skip.is_some(),
        near_zero_count,
        stable: max_re < -STABILITY_MARGIN * scale,
        matrix_norm: scale,
    })
}

/// Matrix, spectrum and verdict for one solution.
pub fn analyze(spec: &ArraySpec, inj: &InjectionSource, sol: &SynchronizedSolution) -> Result<StabilityResult> {
    let m = assemble_stability_matrix(spec, inj, sol)?;
    let ev = eigenvalues(&m.a)?;
    classify_stability(&ev, !inj.is_present(), m.a.norm())
}

#[derive(Debug, Clone)]
pub struct PolePoint {
    pub param: f64,
    pub result: StabilityResult,
}

/// A refined stability boundary: the bracket that straddles it.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub stable_side: f64,
    pub unstable_side: f64,
    pub max_re_stable: f64,
    pub max_re_unstable: f64,
}

impl Boundary {
    pub fn location(&self) -> f64 {
        0.5 * (self.stable_side + self.unstable_side)
    }
}

#[derive(Debug, Clone)]
pub struct StableRange {
    pub intervals: Vec<(f64, f64)>,
    pub boundaries: Vec<Boundary>,
    pub trace: Vec<PolePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableRangeOptions {
    pub solve: SolveOptions,
    /// Bisection stops once the bracket is narrower than this.
    pub resolution: f64,
}

impl Default for StableRangeOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            resolution: 1e-3,
        }
    }
}

fn refine(
    spec: &ArraySpec,
    inj: &InjectionSource,
    stable: (f64, &SynchronizedSolution, f64),
    unstable: (f64, f64),
    opts: &StableRangeOptions,
) -> Boundary {
    let (mut s, mut sol, mut re_s) = (stable.0, stable.1.clone(), stable.2);
    let (mut u, mut re_u) = unstable;
    while (u - s).abs() > opts.resolution {
        let mid = 0.5 * (s + u);
        let Ok(m) = solve_constant_phase(spec, inj, mid, Some(&sol.state()), &opts.solve) else { break };
        let Ok(r) = analyze(spec, inj, &m) else { break };
        if r.stable {
            s = mid;
            sol = m;
            re_s = r.max_re_nonstructural;
        } else {
            u = mid;
            re_u = r.max_re_nonstructural;
        }
    }
    Boundary {
        stable_side: s,
        unstable_side: u,
        max_re_stable: re_s,
        max_re_unstable: re_u,
    }
}

/// Classifies every converged point of a phase sweep and refines the edges
/// of the stable intervals by bisection.
pub fn stable_range(
    spec: &ArraySpec,
    inj: &InjectionSource,
    curve: &SweepCurve,
    opts: &StableRangeOptions,
) -> Result<StableRange> {
    let results: Vec<Option<Result<StabilityResult>>> = curve
        .points
        .par_iter()
        .map(|p| p.solution.as_ref().map(|s| analyze(spec, inj, s)))
        .collect();
    let mut verdicts = Vec::with_capacity(results.len());
    let mut trace = Vec::new();
    for (p, r) in curve.points.iter().zip(results) {
        match r {
            Some(r) => {
                let r = r?;
                verdicts.push(Some((r.stable, r.max_re_nonstructural)));
                trace.push(PolePoint { param: p.param, result: r });
            }
            None => verdicts.push(None),
        }
    }

    let pts = &curve.points;
    let mut intervals = Vec::new();
    let mut boundaries = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        if !matches!(verdicts[i], Some((true, _))) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < pts.len() && matches!(verdicts[i + 1], Some((true, _))) {
            i += 1;
        }
        let end = i;
        let mut lo = pts[start].param;
        let mut hi = pts[end].param;
        if start > 0 {
            if let Some((false, re_u)) = verdicts[start - 1] {
                let (_, re_s) = verdicts[start].unwrap();
                let sol = pts[start].solution.as_ref().unwrap();
                let b = refine(spec, inj, (lo, sol, re_s), (pts[start - 1].param, re_u), opts);
                lo = b.location();
                boundaries.push(b);
            }
        }
        if end + 1 < pts.len() {
            if let Some((false, re_u)) = verdicts[end + 1] {
                let (_, re_s) = verdicts[end].unwrap();
                let sol = pts[end].solution.as_ref().unwrap();
                let b = refine(spec, inj, (hi, sol, re_s), (pts[end + 1].param, re_u), opts);
                hi = b.location();
                boundaries.push(b);
            }
        }
        intervals.push((lo, hi));
        i += 1;
    }
    Ok(StableRange {
        intervals,
        boundaries,
        trace,
    })
}
