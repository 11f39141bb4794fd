//! Coupled first-harmonic equations of a linear array and their constant
//! phase-shift solutions.
//!
//! Unknowns are ordered `[V_0..V_{N-1}, eta_i (i != q), omega_s/omega_ref]`,
//! residuals as interleaved `(Re R_i, Im R_i)` pairs.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::coupling::{coupling_matrix, CouplingParams};
use crate::error::{OscError, Result};
use crate::extraction::{solve_free_running, NonPwModel, PiecewiseModel};
use crate::newton::{self, NewtonOptions, NewtonSystem};
use crate::oscillator::OscillatorModel;

/// Admittance description of one array element.
#[derive(Debug, Clone)]
pub enum ElementModel {
    Piecewise(Arc<PiecewiseModel>),
    Linearized(Arc<NonPwModel>),
    Exact(Arc<dyn OscillatorModel>),
}

impl ElementModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ElementModel::Piecewise(_) => "pw",
            ElementModel::Linearized(_) => "nonpw",
            ElementModel::Exact(_) => "exact",
        }
    }

    pub fn eta_range(&self) -> Option<(f64, f64)> {
        match self {
            ElementModel::Piecewise(m) => Some(m.range()),
            _ => None,
        }
    }

    /// Expansion sample used at `eta`; `None` for the exact oracle.
    pub fn anchor(&self, eta: f64) -> Result<Option<usize>> {
        match self {
            ElementModel::Piecewise(m) => m.anchor_index(eta).map(Some),
            ElementModel::Linearized(_) => Ok(Some(0)),
            ElementModel::Exact(_) => Ok(None),
        }
    }

    fn sample(&self, anchor: Option<usize>) -> Option<&crate::extraction::AdmittanceSample> {
        match (self, anchor) {
            (ElementModel::Piecewise(m), Some(k)) => m.samples().get(k),
            (ElementModel::Linearized(m), _) => Some(&m.sample),
            _ => None,
        }
    }

    fn missing_anchor() -> OscError {
        OscError::InvalidParameter("piecewise element evaluated without an interval index".into())
    }

    /// Admittance with the expansion sample held at `anchor`.
    pub fn admittance(&self, v: f64, omega: f64, eta: f64, anchor: Option<usize>) -> Result<Complex64> {
        match self {
            ElementModel::Exact(o) => o.admittance(v, omega, eta),
            _ => Ok(self
                .sample(anchor)
                .ok_or_else(Self::missing_anchor)?
                .linear_admittance(v, omega, eta)),
        }
    }

    /// `(I_Gr, I_Gi)`.
    pub fn injection_gains(&self, v: f64, omega: f64, eta: f64, anchor: Option<usize>) -> Result<(Complex64, Complex64)> {
        match self {
            ElementModel::Exact(o) => {
                let (g1, gm1) = o.injection_derivatives(v, omega, eta);
                Ok(crate::oscillator::inverse_chain_rule(g1, gm1))
            }
            _ => Ok(self.sample(anchor).ok_or_else(Self::missing_anchor)?.injection_gains()),
        }
    }

    /// `(dY/dV, dY/domega)` at the given point.
    pub fn partials(&self, v: f64, omega: f64, eta: f64, anchor: Option<usize>) -> Result<(Complex64, Complex64)> {
        match self {
            ElementModel::Exact(o) => {
                let (hv, hw) = (1e-5 * v, 1e-7 * omega);
                let yv = (o.admittance(v + hv, omega, eta)? - o.admittance(v - hv, omega, eta)?) / (2.0 * hv);
                let yw = (o.admittance(v, omega + hw, eta)? - o.admittance(v, omega - hw, eta)?) / (2.0 * hw);
                Ok((yv, yw))
            }
            _ => {
                let s = self.sample(anchor).ok_or_else(Self::missing_anchor)?;
                Ok((s.y_v, s.y_omega))
            }
        }
    }

    /// Free-running `(V, omega)` of this element on its own at `eta`.
    pub fn free_running(&self, eta: f64) -> Result<(f64, f64)> {
        match self {
            ElementModel::Exact(o) => solve_free_running(o.as_ref(), eta, o.free_running_guess(eta)),
            _ => self.sample(self.anchor(eta)?).ok_or_else(Self::missing_anchor)?.linear_free_running(eta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArraySpec {
    pub models: Vec<ElementModel>,
    pub coupling: CouplingParams,
    pub q: usize,
    pub eta_q: f64,
    v_ref: f64,
    omega_free: f64,
}

impl ArraySpec {
    pub fn new(models: Vec<ElementModel>, coupling: CouplingParams, q: usize, eta_q: f64) -> Result<Self> {
        let n = models.len();
        if n < 2 {
            return Err(OscError::InvalidParameter(format!("an array needs at least 2 oscillators, got {n}")));
        }
        if q >= n {
            return Err(OscError::InvalidParameter(format!("reference index {q} out of range for {n} oscillators")));
        }
        for (i, m) in models.iter().enumerate() {
            if let Some((lo, hi)) = m.eta_range() {
                if !(eta_q >= lo && eta_q <= hi) {
                    return Err(OscError::OutOfRange {
                        what: format!("fixed tuning voltage for oscillator {i}"),
                        eta: eta_q,
                        lo,
                        hi,
                    });
                }
            }
        }
        let (v_ref, omega_free) = models[q].free_running(eta_q)?;
        if !(v_ref > 0.0 && omega_free > 0.0) {
            return Err(OscError::Inconsistent(format!(
                "reference oscillator has no free-running point at eta = {eta_q} V"
            )));
        }
        Ok(Self {
            models,
            coupling,
            q,
            eta_q,
            v_ref,
            omega_free,
        })
    }

    pub fn n(&self) -> usize {
        self.models.len()
    }

    /// Free-running amplitude of the reference oscillator at `eta_q`.
    pub fn v_ref(&self) -> f64 {
        self.v_ref
    }

    pub fn omega_free(&self) -> f64 {
        self.omega_free
    }

    pub fn omega_ref(&self) -> f64 {
        self.coupling.omega_ref()
    }

    /// Active expansion samples, naming the oscillator on range errors.
    pub fn anchors(&self, eta: &[f64]) -> Result<Vec<Option<usize>>> {
        self.models
            .iter()
            .zip(eta)
            .enumerate()
            .map(|(i, (m, &e))| {
                m.anchor(e).map_err(|err| match err {
                    OscError::OutOfRange { eta, lo, hi, .. } => OscError::OutOfRange {
                        what: format!("oscillator {i}"),
                        eta,
                        lo,
                        hi,
                    },
                    other => other,
                })
            })
            .collect()
    }

    /// Starting point: every element at the reference free-running values.
    pub fn initial_state(&self, delta_phi: f64, phase_origin: usize) -> ArrayState {
        let n = self.n();
        ArrayState {
            v: vec![self.v_ref; n],
            phi: phases(n, phase_origin, delta_phi),
            eta: vec![self.eta_q; n],
            omega_s: self.omega_free,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InjectionSource {
    pub i_s: f64,
    pub theta_s: f64,
}

impl InjectionSource {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(i_s: f64, theta_s: f64) -> Result<Self> {
        if !(i_s >= 0.0 && i_s.is_finite() && theta_s.is_finite()) {
            return Err(OscError::InvalidParameter(format!(
                "injection amplitude must be non-negative and finite, got {i_s}"
            )));
        }
        Ok(Self { i_s, theta_s })
    }

    pub fn is_present(&self) -> bool {
        self.i_s > 0.0
    }
}

/// Candidate values of all array variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayState {
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynchronizedSolution {
    pub delta_phi: f64,
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    pub omega_s: f64,
    pub k_vec: Vec<Option<usize>>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl SynchronizedSolution {
    pub fn state(&self) -> ArrayState {
        ArrayState {
            v: self.v.clone(),
            phi: self.phi.clone(),
            eta: self.eta.clone(),
            omega_s: self.omega_s,
        }
    }
}

pub fn phases(n: usize, origin: usize, delta_phi: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 - origin as f64) * delta_phi).collect()
}

/// Complex residuals `R_i` with the expansion samples held at `anchors`.
pub fn complex_residuals(
    spec: &ArraySpec,
    inj: &InjectionSource,
    state: &ArrayState,
    anchors: &[Option<usize>],
) -> Result<Vec<Complex64>> {
    let n = spec.n();
    if state.v.len() != n || state.phi.len() != n || state.eta.len() != n || anchors.len() != n {
        return Err(OscError::InvalidParameter("state length does not match the array".into()));
    }
    let w = state.omega_s;
    let c = coupling_matrix(&spec.coupling, n, w)?;
    let rot: Vec<Complex64> = state.phi.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (vi, ei) = (state.v[i], state.eta[i]);
        let mut r = spec.models[i].admittance(vi, w, ei, anchors[i])? * vi;
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        for k in lo..=hi {
            r += c[(i, k)] * state.v[k] * rot[k] * rot[i].conj();
        }
        if i == spec.q && inj.i_s != 0.0 {
            let (gr, gi) = spec.models[i].injection_gains(vi, w, ei, anchors[i])?;
            let t = inj.theta_s - state.phi[i];
            r += inj.i_s * (gr * t.cos() + gi * t.sin());
        }
        out.push(r);
    }
    Ok(out)
}

fn interleave(r: &[Complex64]) -> Vec<f64> {
    r.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Interleaved real residuals with the active intervals given explicitly.
pub fn assemble_residual_with(
    spec: &ArraySpec,
    inj: &InjectionSource,
    state: &ArrayState,
    anchors: &[Option<usize>],
) -> Result<Vec<f64>> {
    complex_residuals(spec, inj, state, anchors).map(|r| interleave(&r))
}

/// Interleaved `(Re R_i, Im R_i)` residuals of the coupled system.
pub fn assemble_residual(spec: &ArraySpec, inj: &InjectionSource, state: &ArrayState) -> Result<Vec<f64>> {
    let anchors = spec.anchors(&state.eta)?;
    assemble_residual_with(spec, inj, state, &anchors)
}

/// Max-norm of the residual scaled by the reference amplitude.
pub fn residual_norm(spec: &ArraySpec, inj: &InjectionSource, state: &ArrayState) -> Result<f64> {
    let r = assemble_residual(spec, inj, state)?;
    Ok(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / spec.v_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveOptions {
    pub newton: NewtonOptions,
    /// Oscillator whose phase is pinned to zero; the reference index when unset.
    pub phase_origin: Option<usize>,
}

struct ConstantPhase<'a> {
    spec: &'a ArraySpec,
    inj: &'a InjectionSource,
    phi: Vec<f64>,
}

impl ConstantPhase<'_> {
    fn state(&self, x: &[f64]) -> ArrayState {
        let n = self.spec.n();
        let q = self.spec.q;
        let mut eta = Vec::with_capacity(n);
        let mut it = x[n..2 * n - 1].iter();
        for i in 0..n {
            eta.push(if i == q { self.spec.eta_q } else { *it.next().unwrap() });
        }
        ArrayState {
            v: x[..n].to_vec(),
            phi: self.phi.clone(),
            eta,
            omega_s: x[2 * n - 1] * self.spec.omega_ref(),
        }
    }

    fn pack(&self, s: &ArrayState) -> Vec<f64> {
        let mut x = s.v.clone();
        x.extend(s.eta.iter().enumerate().filter(|(i, _)| *i != self.spec.q).map(|(_, e)| *e));
        x.push(s.omega_s / self.spec.omega_ref());
        x
    }
}

impl NewtonSystem for ConstantPhase<'_> {
    type Ctx = Vec<Option<usize>>;

    fn context(&self, x: &[f64]) -> Result<Self::Ctx> {
        self.spec.anchors(&self.state(x).eta)
    }

    fn residual(&self, x: &[f64], ctx: &Self::Ctx) -> Result<Vec<f64>> {
        assemble_residual_with(self.spec, self.inj, &self.state(x), ctx)
    }

    fn admissible(&self, x: &[f64]) -> bool {
        let n = self.spec.n();
        x[..n].iter().all(|&v| v > 0.0) && x[2 * n - 1] > 0.0
    }

    fn scale(&self) -> f64 {
        self.spec.v_ref()
    }
}

/// Newton solve for the solution with `phi_{i+1} - phi_i = delta_phi`.
pub fn solve_constant_phase(
    spec: &ArraySpec,
    inj: &InjectionSource,
    delta_phi: f64,
    guess: Option<&ArrayState>,
    opts: &SolveOptions,
) -> Result<SynchronizedSolution> {
    let n = spec.n();
    let origin = opts.phase_origin.unwrap_or(spec.q);
    if origin >= n {
        return Err(OscError::InvalidParameter(format!("phase origin {origin} out of range")));
    }
    let sys = ConstantPhase {
        spec,
        inj,
        phi: phases(n, origin, delta_phi),
    };
    let start = match guess {
        Some(g) => g.clone(),
        None => spec.initial_state(delta_phi, origin),
    };
    if start.v.len() != n || start.eta.len() != n {
        return Err(OscError::InvalidParameter("guess length does not match the array".into()));
    }
    let out = newton::solve(&sys, &sys.pack(&start), &opts.newton, &format!("constant-phase solve at dphi = {delta_phi}"))?;
    let st = sys.state(&out.x);
    Ok(SynchronizedSolution {
        delta_phi,
        v: st.v,
        phi: st.phi,
        eta: st.eta,
        omega_s: st.omega_s,
        k_vec: out.ctx,
        residual_norm: out.residual_norm,
        iterations: out.iterations,
    })
}

/// One entry of a continuation curve; `None` marks a gap.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub param: f64,
    pub solution: Option<SynchronizedSolution>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
    pub diagnostic: Option<String>,
}

impl SweepCurve {
    pub fn converged(&self) -> impl Iterator<Item = (f64, &SynchronizedSolution)> {
        self.points.iter().filter_map(|p| p.solution.as_ref().map(|s| (p.param, s)))
    }

    pub fn gaps(&self) -> usize {
        self.points.iter().filter(|p| p.solution.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub solve: SolveOptions,
    /// Smallest continuation sub-step tried before declaring a gap.
    pub min_step: f64,
    /// Consecutive gaps after which a sweep direction is abandoned.
    pub max_gaps: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            min_step: 1e-3,
            max_gaps: 3,
        }
    }
}

/// Natural-parameter continuation from `prev` (at `from`) to `to`, halving
/// the sub-step on failure until it drops below `min_step`.
fn reach<F>(solve_at: &F, prev: &SynchronizedSolution, from: f64, to: f64, min_step: f64) -> Result<SynchronizedSolution>
where
    F: Fn(f64, &ArrayState) -> Result<SynchronizedSolution>,
{
    match solve_at(to, &prev.state()) {
        Ok(s) => Ok(s),
        Err(e) => {
            let half = 0.5 * (to - from);
            if half == 0.0 || half.abs() < min_step {
                return Err(e);
            }
            let mid = from + half;
            let m = reach(solve_at, prev, from, mid, min_step)?;
            reach(solve_at, &m, mid, to, min_step)
        }
    }
}

/// Continue along `params[start..]` and `params[..start]` (outward from
/// `start`) after solving the first point from `first`.
fn continuation<F>(
    params: &[f64],
    start: usize,
    first: SynchronizedSolution,
    solve_at: &F,
    opts: &SweepOptions,
) -> SweepCurve
where
    F: Fn(f64, &ArrayState) -> Result<SynchronizedSolution>,
{
    let mut slots: Vec<Option<SynchronizedSolution>> = vec![None; params.len()];
    let mut notes = Vec::new();
    let mut last_index = [start; 2];
    slots[start] = Some(first);
    for (dir, order) in [
        (0usize, (start + 1..params.len()).collect::<Vec<_>>()),
        (1, (0..start).rev().collect()),
    ] {
        let mut gaps = 0;
        for i in order {
            let li = last_index[dir];
            let prev = slots[li].clone().unwrap();
            match reach(solve_at, &prev, params[li], params[i], opts.min_step) {
                Ok(s) => {
                    slots[i] = Some(s);
                    last_index[dir] = i;
                    gaps = 0;
                }
                Err(e) => {
                    gaps += 1;
                    if gaps >= opts.max_gaps {
                        notes.push(format!("truncated at {}: {e}", params[i]));
                        break;
                    }
                }
            }
        }
    }
    // Trim trailing gaps so truncated directions do not report phantom points.
    let first_ok = slots.iter().position(|s| s.is_some()).unwrap_or(0);
    let last_ok = slots.iter().rposition(|s| s.is_some()).unwrap_or(0);
    SweepCurve {
        points: (first_ok..=last_ok)
            .map(|i| SweepPoint {
                param: params[i],
                solution: slots[i].take(),
            })
            .collect(),
        diagnostic: if notes.is_empty() { None } else { Some(notes.join("; ")) },
    }
}

/// Evenly spaced parameter values from `lo` to `hi` with at most `step` spacing.
pub fn param_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(hi >= lo && step > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(OscError::InvalidParameter(format!("bad sweep range [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step - 1e-9).ceil().max(0.0) as usize;
    if n == 0 {
        return Ok(vec![lo]);
    }
    let h = (hi - lo) / n as f64;
    let mut g: Vec<f64> = (0..=n).map(|k| lo + h * k as f64).collect();
    g[n] = hi;
    Ok(g)
}

/// Phase-shift continuation over `[lo, hi]` starting near the midpoint.
pub fn sweep_phase(
    spec: &ArraySpec,
    inj: &InjectionSource,
    range: (f64, f64),
    step: f64,
    opts: &SweepOptions,
) -> Result<SweepCurve> {
    let params = param_grid(range.0, range.1, step)?;
    let mid = 0.5 * (range.0 + range.1);
    let start = params
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - mid).abs().total_cmp(&(b.1 - mid).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let first = solve_constant_phase(spec, inj, params[start], None, &opts.solve)?;
    let solve_at = |d: f64, g: &ArrayState| solve_constant_phase(spec, inj, d, Some(g), &opts.solve);
    Ok(continuation(&params, start, first, &solve_at, opts))
}

#[derive(Debug, Clone)]
pub struct InjectionSweep {
    pub delta_phi: f64,
    pub i_s: f64,
    /// Parameter is the source phase theta_s.
    pub curve: SweepCurve,
    /// Largest difference in any unknown between theta_s = 0 and 2 pi.
    pub closure_mismatch: Option<f64>,
}

impl InjectionSweep {
    /// Span of synchronization frequencies over the loop.
    pub fn bandwidth_hz(&self) -> Option<f64> {
        let mut it = self.curve.converged().map(|(_, s)| s.omega_s / (2.0 * PI)).peekable();
        it.peek()?;
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f), hi.max(f)));
        Some(hi - lo)
    }
}

/// Number of amplitude steps used to switch the source on.
const RAMP_STEPS: usize = 10;

/// Source-phase continuation over `[0, 2 pi]` at fixed phase shift.
pub fn sweep_injection(
    spec: &ArraySpec,
    delta_phi: f64,
    i_s: f64,
    theta_points: usize,
    opts: &SweepOptions,
) -> Result<InjectionSweep> {
    if theta_points < 2 {
        return Err(OscError::InvalidParameter("theta grid needs at least 2 points".into()));
    }
    let _ = InjectionSource::new(i_s, 0.0)?;
    let thetas: Vec<f64> = (0..theta_points)
        .map(|k| 2.0 * PI * k as f64 / (theta_points - 1) as f64)
        .collect();
    let theta0 = thetas[0];

    // Switch the source on gradually at the first phase.
    let mut sol = solve_constant_phase(spec, &InjectionSource::none(), delta_phi, None, &opts.solve)?;
    let ramp = |amp: f64, g: &ArrayState| {
        solve_constant_phase(spec, &InjectionSource { i_s: amp, theta_s: theta0 }, delta_phi, Some(g), &opts.solve)
    };
    let mut amp = 0.0;
    for k in 1..=RAMP_STEPS {
        let next = i_s * k as f64 / RAMP_STEPS as f64;
        sol = reach(&ramp, &sol, amp, next, i_s * 1e-4)?;
        amp = next;
    }

    let solve_at = |theta: f64, g: &ArrayState| {
        solve_constant_phase(spec, &InjectionSource { i_s, theta_s: theta }, delta_phi, Some(g), &opts.solve)
    };
    let theta_opts = SweepOptions {
        min_step: opts.min_step.min(2.0 * PI / theta_points as f64 / 64.0),
        ..*opts
    };
    let curve = continuation(&thetas, 0, sol, &solve_at, &theta_opts);
    let closure_mismatch = match (curve.points.first(), curve.points.last()) {
        (Some(a), Some(b)) if curve.points.len() == thetas.len() => match (&a.solution, &b.solution) {
            (Some(s0), Some(s1)) => Some(state_distance(spec, s0, s1)),
            _ => None,
        },
        _ => None,
    };
    Ok(InjectionSweep {
        delta_phi,
        i_s,
        curve,
        closure_mismatch,
    })
}

/// Max difference over the unknowns (amplitudes, free tuning voltages,
/// normalized frequency).
pub fn state_distance(spec: &ArraySpec, a: &SynchronizedSolution, b: &SynchronizedSolution) -> f64 {
    let dv = a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs());
    let de = a.eta.iter().zip(&b.eta).map(|(x, y)| (x - y).abs());
    let dw = std::iter::once((a.omega_s - b.omega_s).abs() / spec.omega_ref());
    dv.chain(de).chain(dw).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{extract_piecewise, ExtractionOptions, SamplingGrid};
    use crate::oscillator::VdpParams;

    fn pw_model(c_out: Option<f64>, lo: f64, hi: f64, p: usize) -> ElementModel {
        let osc = VdpParams::reference_design(c_out).unwrap();
        let g = SamplingGrid::equispaced(lo, hi, p).unwrap();
        ElementModel::Piecewise(Arc::new(extract_piecewise(&osc, &g, ExtractionOptions::default()).unwrap()))
    }

    fn identical_pw() -> ArraySpec {
        let m = pw_model(None, 2.4, 4.0, 33);
        ArraySpec::new(vec![m.clone(), m.clone(), m], CouplingParams::reference_design(), 1, 2.5).unwrap()
    }

    fn exact(c_out: Option<f64>) -> ElementModel {
        ElementModel::Exact(Arc::new(VdpParams::reference_design(c_out).unwrap()))
    }

    #[test]
    fn zero_shift_keeps_tuning_at_center() {
        let spec = identical_pw();
        let s = solve_constant_phase(&spec, &InjectionSource::none(), 0.0, None, &SolveOptions::default()).unwrap();
        assert!((s.eta[0] - 2.5).abs() < 1e-10 && (s.eta[2] - 2.5).abs() < 1e-10, "{:?}", s.eta);
        assert!(s.residual_norm < 1e-9);
        assert_eq!(s.phi[1], 0.0);
    }

    #[test]
    fn solution_record_is_idempotent() {
        let spec = identical_pw();
        for d in [-1.2, 0.3, 0.9] {
            let s = solve_constant_phase(&spec, &InjectionSource::none(), d, None, &SolveOptions::default()).unwrap();
            assert!(residual_norm(&spec, &InjectionSource::none(), &s.state()).unwrap() < 1e-9);
            assert_eq!(s.k_vec, spec.anchors(&s.eta).unwrap());
            for i in 0..2 {
                assert!((s.phi[i + 1] - s.phi[i] - d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mirror_symmetry_under_index_reversal() {
        let spec = identical_pw();
        let none = InjectionSource::none();
        for d in [0.4, 1.1, 1.4] {
            let a = solve_constant_phase(&spec, &none, d, None, &SolveOptions::default()).unwrap();
            let b = solve_constant_phase(&spec, &none, -d, None, &SolveOptions::default()).unwrap();
            for i in 0..3 {
                assert!((a.v[i] - b.v[2 - i]).abs() < 1e-8);
                assert!((a.eta[i] - b.eta[2 - i]).abs() < 1e-8);
            }
            assert!((a.omega_s - b.omega_s).abs() / a.omega_s < 1e-12);
        }
    }

    #[test]
    fn decoupled_elements_sit_at_their_free_running_point() {
        let mut cp = CouplingParams::reference_design();
        // Series resistors isolate every port.
        cp.r_s = 1e12;
        let m = pw_model(None, 2.4, 4.0, 9);
        let spec = ArraySpec::new(vec![m.clone(), m], cp, 0, 2.5).unwrap();
        let ElementModel::Piecewise(pw) = &spec.models[0] else { unreachable!() };
        let s0 = &pw.samples()[2];
        let st = ArrayState {
            v: vec![s0.v_o; 2],
            phi: vec![0.0, 0.7],
            eta: vec![s0.eta_c; 2],
            omega_s: s0.omega_o(),
        };
        let r = assemble_residual(&spec, &InjectionSource::none(), &st).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-11), "{r:?}");
    }

    #[test]
    fn out_of_range_names_oscillator() {
        let spec = identical_pw();
        let st = ArrayState {
            v: vec![0.5; 3],
            phi: vec![0.0; 3],
            eta: vec![2.5, 2.5, 4.5],
            omega_s: spec.omega_free(),
        };
        match assemble_residual(&spec, &InjectionSource::none(), &st) {
            Err(OscError::OutOfRange { what, .. }) => assert_eq!(what, "oscillator 2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gauge_origin_does_not_change_solution() {
        let m = pw_model(None, 0.0, 5.0, 27);
        let spec = ArraySpec::new(vec![m.clone(), m.clone(), m], CouplingParams::reference_design(), 1, 2.5).unwrap();
        let inj = InjectionSource::new(2e-4, 0.8).unwrap();
        let a = solve_constant_phase(&spec, &inj, 0.5, None, &SolveOptions::default()).unwrap();
        // Pinning oscillator 0 instead shifts every phase by 0.5, which the
        // source must follow.
        let inj_b = InjectionSource::new(2e-4, 0.8 + 0.5).unwrap();
        let opts = SolveOptions { phase_origin: Some(0), ..Default::default() };
        let b = solve_constant_phase(&spec, &inj_b, 0.5, None, &opts).unwrap();
        assert!(state_distance(&spec, &a, &b) < 1e-10);
    }

    #[test]
    fn symmetric_sweep_is_mirror_symmetric_and_monotone() {
        let spec = identical_pw();
        let c = sweep_phase(&spec, &InjectionSource::none(), (-1.4, 1.4), 0.1, &SweepOptions::default()).unwrap();
        assert_eq!(c.gaps(), 0);
        let pts: Vec<_> = c.converged().collect();
        assert_eq!(pts.len(), 29);
        for w in pts.windows(2) {
            assert!(w[1].1.eta[0] < w[0].1.eta[0]);
            assert!(w[1].1.eta[2] > w[0].1.eta[2]);
        }
        let n = pts.len();
        for i in 0..n {
            let (a, b) = (pts[i].1, pts[n - 1 - i].1);
            assert!((a.eta[0] - b.eta[2]).abs() < 1e-8);
        }
    }

    #[test]
    fn tight_range_forces_step_halving() {
        // A coarse step across the whole range must still be reached by
        // internal halving.
        let spec = identical_pw();
        let opts = SweepOptions::default();
        let c = sweep_phase(&spec, &InjectionSource::none(), (0.0, 1.45), 1.45, &opts).unwrap();
        assert_eq!(c.converged().count(), 2);
    }

    #[test]
    fn zero_injection_has_flat_frequency() {
        let spec = identical_pw();
        let sw = sweep_injection(&spec, 0.5, 0.0, 13, &SweepOptions::default()).unwrap();
        assert!(sw.bandwidth_hz().unwrap() < 1e-3);
        assert!(sw.closure_mismatch.unwrap() < 1e-12);
    }

    #[test]
    fn exact_model_solves_too() {
        let m = exact(None);
        let spec = ArraySpec::new(vec![m.clone(), m.clone(), m], CouplingParams::reference_design(), 1, 2.5).unwrap();
        let s = solve_constant_phase(&spec, &InjectionSource::none(), 0.7, None, &SolveOptions::default()).unwrap();
        assert!(s.k_vec.iter().all(|k| k.is_none()));
        assert!(s.residual_norm < 1e-9);
    }

    #[test]
    fn array_spec_validation() {
        let m = pw_model(None, 2.4, 4.0, 5);
        let cp = CouplingParams::reference_design();
        assert!(ArraySpec::new(vec![m.clone()], cp, 0, 2.5).is_err());
        assert!(ArraySpec::new(vec![m.clone(), m.clone()], cp, 2, 2.5).is_err());
        assert!(ArraySpec::new(vec![m.clone(), m], cp, 0, 4.5).is_err());
    }

    #[test]
    fn param_grid_covers_range() {
        let g = param_grid(-1.4, 1.4, 0.05).unwrap();
        assert_eq!(g.len(), 57);
        assert_eq!(g[0], -1.4);
        assert_eq!(g[56], 1.4);
        assert_eq!(param_grid(0.3, 0.3, 0.1).unwrap(), vec![0.3]);
    }
}
