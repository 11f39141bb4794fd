//! Reference solutions from the un-linearized oscillator admittance and
//! curve-to-curve error metrics.

use std::sync::Arc;

use crate::array::{solve_constant_phase, ArraySpec, ArrayState, ElementModel, InjectionSource, SolveOptions, SweepCurve, SynchronizedSolution};
use crate::coupling::CouplingParams;
use crate::error::{OscError, Result};
use crate::oscillator::OscillatorModel;

/// Array whose elements are evaluated by the oracle directly.
pub fn exact_spec(oscillators: Vec<Arc<dyn OscillatorModel>>, coupling: CouplingParams, q: usize, eta_q: f64) -> Result<ArraySpec> {
    ArraySpec::new(oscillators.into_iter().map(ElementModel::Exact).collect(), coupling, q, eta_q)
}

/// Solve of the full first-harmonic system; every element must be an oracle.
pub fn exact_sync_solve(
    spec: &ArraySpec,
    inj: &InjectionSource,
    delta_phi: f64,
    guess: Option<&ArrayState>,
    opts: &SolveOptions,
) -> Result<SynchronizedSolution> {
    if let Some(i) = spec.models.iter().position(|m| !matches!(m, ElementModel::Exact(_))) {
        return Err(OscError::InvalidParameter(format!(
            "exact solve needs oracle-backed elements; oscillator {i} is {}",
            spec.models[i].kind()
        )));
    }
    solve_constant_phase(spec, inj, delta_phi, guess, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveComparison {
    pub max_abs_eta_error: f64,
    pub rms_eta_error: f64,
    pub max_rel_freq_error: f64,
    /// Largest tuning-voltage error of each oscillator.
    pub per_oscillator_max_eta: Vec<f64>,
    pub points: usize,
    pub domain: (f64, f64),
}

struct Sample {
    eta: Vec<f64>,
    omega: f64,
}

/// Linear interpolation inside a gap-free segment of the curve.
fn interpolate(curve: &SweepCurve, x: f64) -> Option<Sample> {
    let pts = &curve.points;
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (Some(sa), Some(sb)) = (&a.solution, &b.solution) else { continue };
        if x == a.param {
            return Some(Sample { eta: sa.eta.clone(), omega: sa.omega_s });
        }
        if x > a.param && x <= b.param {
            let t = (x - a.param) / (b.param - a.param);
            return Some(Sample {
                eta: sa.eta.iter().zip(&sb.eta).map(|(p, q)| p + t * (q - p)).collect(),
                omega: sa.omega_s + t * (sb.omega_s - sa.omega_s),
            });
        }
    }
    // A lone converged point.
    pts.iter()
        .find(|p| p.param == x)
        .and_then(|p| p.solution.as_ref())
        .map(|s| Sample { eta: s.eta.clone(), omega: s.omega_s })
}

fn converged_span(c: &SweepCurve) -> Option<(f64, f64)> {
    let mut it = c.converged().map(|(p, _)| p);
    let first = it.next()?;
    Some((first, it.last().unwrap_or(first)))
}

/// Error metrics between two curves over their common converged domain,
/// resampled on the union of both parameter grids.
pub fn compare_curves(a: &SweepCurve, b: &SweepCurve) -> Result<CurveComparison> {
    let empty = || OscError::InvalidParameter("curves have no overlapping converged domain".into());
    let (a_lo, a_hi) = converged_span(a).ok_or_else(empty)?;
    let (b_lo, b_hi) = converged_span(b).ok_or_else(empty)?;
    let (lo, hi) = (a_lo.max(b_lo), a_hi.min(b_hi));
    if lo > hi {
        return Err(empty());
    }
    let mut grid: Vec<f64> = a
        .points
        .iter()
        .chain(&b.points)
        .map(|p| p.param)
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut max_eta = 0.0f64;
    let mut sum_sq = 0.0;
    let mut count_sq = 0usize;
    let mut max_freq = 0.0f64;
    let mut per_osc: Vec<f64> = Vec::new();
    let mut points = 0;
    for x in grid {
        let (Some(sa), Some(sb)) = (interpolate(a, x), interpolate(b, x)) else { continue };
        if sa.eta.len() != sb.eta.len() {
            return Err(OscError::InvalidParameter("curves describe arrays of different size".into()));
        }
        per_osc.resize(sa.eta.len(), 0.0);
        for (i, (p, q)) in sa.eta.iter().zip(&sb.eta).enumerate() {
            let e = (p - q).abs();
            max_eta = max_eta.max(e);
            per_osc[i] = per_osc[i].max(e);
            sum_sq += e * e;
            count_sq += 1;
        }
        max_freq = max_freq.max((sa.omega - sb.omega).abs() / sb.omega.abs());
        points += 1;
    }
    if points == 0 {
        return Err(empty());
    }
    Ok(CurveComparison {
        max_abs_eta_error: max_eta,
        rms_eta_error: (sum_sq / count_sq as f64).sqrt(),
        max_rel_freq_error: max_freq,
        per_oscillator_max_eta: per_osc,
        points,
        domain: (lo, hi),
    })
}

/// Largest `|(eta_{q-k} - eta_q) + (eta_{q+k} - eta_q)|` over the converged
/// points, for every pair of oscillators mirrored about the reference.
/// `None` when no such pair exists.
pub fn mirror_antisymmetry(curve: &SweepCurve, q: usize) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (_, s) in curve.converged() {
        let n = s.eta.len();
        for k in 1..=q.min(n.saturating_sub(q + 1)) {
            let d = (s.eta[q - k] - s.eta[q]) + (s.eta[q + k] - s.eta[q]);
            worst = Some(worst.unwrap_or(0.0).max(d.abs()));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{sweep_phase, SweepOptions, SweepPoint};
    use crate::extraction::{extract_non_pw, extract_piecewise, ExtractionOptions, FdSteps, SamplingGrid};
    use crate::oscillator::VdpParams;
    use num_complex::Complex64;

    fn vdp(c_out: Option<f64>) -> Arc<dyn OscillatorModel> {
        Arc::new(VdpParams::reference_design(c_out).unwrap())
    }

    fn pw(osc: &Arc<dyn OscillatorModel>, p: usize) -> ElementModel {
        let g = SamplingGrid::equispaced(2.4, 4.0, p).unwrap();
        ElementModel::Piecewise(Arc::new(extract_piecewise(osc.as_ref(), &g, ExtractionOptions::default()).unwrap()))
    }

    fn sweep(spec: &ArraySpec, range: (f64, f64)) -> SweepCurve {
        sweep_phase(spec, &InjectionSource::none(), range, 0.1, &SweepOptions::default()).unwrap()
    }

    #[test]
    fn exact_fixed_point_at_zero_shift() {
        let o = vdp(None);
        let spec = exact_spec(vec![o.clone(), o.clone(), o], CouplingParams::reference_design(), 1, 2.5).unwrap();
        let s = exact_sync_solve(&spec, &InjectionSource::none(), 0.0, None, &SolveOptions::default()).unwrap();
        assert!((s.eta[0] - 2.5).abs() < 1e-10 && (s.eta[2] - 2.5).abs() < 1e-10);
    }

    #[test]
    fn exact_solve_refuses_linear_models() {
        let o = vdp(None);
        let m = pw(&o, 5);
        let spec = ArraySpec::new(vec![m.clone(), m], CouplingParams::reference_design(), 0, 2.5).unwrap();
        assert!(exact_sync_solve(&spec, &InjectionSource::none(), 0.0, None, &SolveOptions::default()).is_err());
    }

    #[test]
    fn exact_gauge_invariance() {
        let o = vdp(None);
        let spec = exact_spec(vec![o.clone(), o.clone(), o], CouplingParams::reference_design(), 1, 2.5).unwrap();
        let a = exact_sync_solve(&spec, &InjectionSource::none(), 0.6, None, &SolveOptions::default()).unwrap();
        let opts = SolveOptions { phase_origin: Some(2), ..Default::default() };
        let b = exact_sync_solve(&spec, &InjectionSource::none(), 0.6, None, &opts).unwrap();
        assert!(crate::array::state_distance(&spec, &a, &b) < 1e-10);
    }

    #[test]
    fn self_comparison_is_zero() {
        let o = vdp(None);
        let m = pw(&o, 17);
        let spec = ArraySpec::new(vec![m.clone(), m.clone(), m], CouplingParams::reference_design(), 1, 2.5).unwrap();
        let c = sweep(&spec, (-1.0, 1.0));
        let r = compare_curves(&c, &c).unwrap();
        assert_eq!(r.max_abs_eta_error, 0.0);
        assert_eq!(r.rms_eta_error, 0.0);
        assert_eq!(r.max_rel_freq_error, 0.0);
        assert_eq!(r.points, 21);
    }

    #[test]
    fn disjoint_curves_rejected() {
        let o = vdp(None);
        let spec = exact_spec(vec![o.clone(), o], CouplingParams::reference_design(), 0, 2.5).unwrap();
        let a = sweep(&spec, (-1.0, -0.5));
        let b = sweep(&spec, (0.5, 1.0));
        assert!(compare_curves(&a, &b).is_err());
    }

    #[test]
    fn interpolation_between_grids() {
        let sol = |e: f64| SynchronizedSolution {
            delta_phi: 0.0,
            v: vec![0.5],
            phi: vec![0.0],
            eta: vec![e],
            omega_s: 1.0,
            k_vec: vec![None],
            residual_norm: 0.0,
            iterations: 0,
        };
        let a = SweepCurve {
            points: vec![
                SweepPoint { param: 0.0, solution: Some(sol(1.0)) },
                SweepPoint { param: 1.0, solution: Some(sol(3.0)) },
            ],
            diagnostic: None,
        };
        let b = SweepCurve {
            points: vec![SweepPoint { param: 0.25, solution: Some(sol(1.0)) }, SweepPoint { param: 0.75, solution: Some(sol(1.0)) }],
            diagnostic: None,
        };
        let r = compare_curves(&a, &b).unwrap();
        assert_eq!(r.domain, (0.25, 0.75));
        assert_eq!(r.points, 2);
        assert!((r.max_abs_eta_error - 1.5).abs() < 1e-15);
    }

    #[test]
    fn mirror_pairs() {
        let sol = |eta: Vec<f64>| SynchronizedSolution {
            delta_phi: 0.0,
            v: vec![0.5; eta.len()],
            phi: vec![0.0; eta.len()],
            k_vec: vec![None; eta.len()],
            eta,
            omega_s: 1.0,
            residual_norm: 0.0,
            iterations: 0,
        };
        let c = |eta: Vec<f64>| SweepCurve {
            points: vec![SweepPoint { param: 0.0, solution: Some(sol(eta)) }],
            diagnostic: None,
        };
        // Pairs (1, 3) and (0, 4) about q = 2.
        let r = mirror_antisymmetry(&c(vec![2.0, 2.4, 2.5, 2.7, 3.5]), 2).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert_eq!(mirror_antisymmetry(&c(vec![2.5, 2.6, 2.7]), 0), None);
        assert!(mirror_antisymmetry(&c(vec![2.4, 2.5, 2.6]), 1).unwrap() < 1e-15);
    }

    #[test]
    fn pw_tracks_exact_and_refines() {
        let o = vdp(None);
        let cp = CouplingParams::reference_design();
        let exact = exact_spec(vec![o.clone(), o.clone(), o.clone()], cp, 1, 2.5).unwrap();
        let ce = sweep(&exact, (-1.4, 1.4));
        let err = |p: usize| {
            let m = pw(&o, p);
            let spec = ArraySpec::new(vec![m.clone(), m.clone(), m], cp, 1, 2.5).unwrap();
            compare_curves(&sweep(&spec, (-1.4, 1.4)), &ce).unwrap()
        };
        let (e9, e33) = (err(9), err(33));
        assert!(e33.max_abs_eta_error < 5e-3, "{e33:?}");
        assert!(e9.max_abs_eta_error >= e33.max_abs_eta_error);
    }

    #[test]
    fn asymmetric_array_separates_pw_from_single_point() {
        let outs = [vdp(Some(10e-12)), vdp(None), vdp(Some(9.65e-12))];
        let cp = CouplingParams::reference_design();
        let exact = exact_spec(outs.to_vec(), cp, 1, 2.5).unwrap();
        let range = (-0.5, 0.5);
        let ce = sweep(&exact, range);
        let pw_spec = ArraySpec::new(outs.iter().map(|o| pw(o, 33)).collect(), cp, 1, 2.5).unwrap();
        let np_spec = ArraySpec::new(
            outs.iter()
                .map(|o| ElementModel::Linearized(Arc::new(extract_non_pw(o.as_ref(), 2.5, FdSteps::default()).unwrap())))
                .collect(),
            cp,
            1,
            2.5,
        )
        .unwrap();
        let e_pw = compare_curves(&sweep(&pw_spec, range), &ce).unwrap();
        let e_np = compare_curves(&sweep(&np_spec, range), &ce).unwrap();
        assert!(e_np.max_abs_eta_error > 2.0 * e_pw.max_abs_eta_error, "{e_np:?} {e_pw:?}");
        // The outer oscillators are pulled far from the centre voltage.
        assert!(ce.converged().all(|(_, s)| s.eta[0] > 3.5));
    }

    /// Admittance linear in amplitude and frequency, nonlinear in tuning.
    #[derive(Debug)]
    struct LinearInVw;

    impl OscillatorModel for LinearInVw {
        fn admittance(&self, v: f64, omega: f64, eta: f64) -> Result<Complex64> {
            let w0 = 2.0 * std::f64::consts::PI * 5.2e9;
            Ok(Complex64::new(0.01 * (v - 0.6), 1.5e-12 * (omega - w0) + 4e-3 * (eta - 2.5).sin()))
        }
        fn injection_derivatives(&self, _: f64, _: f64, _: f64) -> (Complex64, Complex64) {
            (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
        }
        fn free_running_guess(&self, _: f64) -> (f64, f64) {
            (0.5, 3.2e10)
        }
    }

    #[test]
    fn pw_and_exact_agree_on_sampled_points() {
        // At zero shift the reference-frequency coupling is real and every
        // element sits at eta_q, which is a grid point.
        let o: Arc<dyn OscillatorModel> = Arc::new(LinearInVw);
        let cp = CouplingParams::reference_design();
        let exact = exact_spec(vec![o.clone(), o.clone(), o.clone()], cp, 1, 2.5).unwrap();
        let g = SamplingGrid::new(vec![2.4, 2.5, 2.6]).unwrap();
        let m = ElementModel::Piecewise(Arc::new(extract_piecewise(o.as_ref(), &g, ExtractionOptions::default()).unwrap()));
        let pwspec = ArraySpec::new(vec![m.clone(), m.clone(), m], cp, 1, 2.5).unwrap();
        let a = exact_sync_solve(&exact, &InjectionSource::none(), 0.0, None, &SolveOptions::default()).unwrap();
        let b = solve_constant_phase(&pwspec, &InjectionSource::none(), 0.0, None, &SolveOptions::default()).unwrap();
        assert!(crate::array::state_distance(&exact, &a, &b) < 1e-8, "{a:?} {b:?}");
    }
}
