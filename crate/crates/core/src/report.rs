//! Plot-ready CSV renderings of solver results. Twelve significant digits,
//! '.' decimal separator, '\n' line endings.

use std::f64::consts::PI;
use std::fmt::Write;

use crate::array::{SweepCurve, SynchronizedSolution};
use crate::stability::{PolePoint, StableRange};
use crate::validation::CurveComparison;

pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

fn index(k: Option<usize>) -> String {
    k.map_or("-1".to_string(), |k| k.to_string())
}

pub fn sweep_header(n: usize, param: &str) -> String {
    let mut h = format!("model,{param},omega_s_hz");
    for i in 0..n {
        let _ = write!(h, ",v_{i},phi_{i}_rad,eta_{i},k_{i}");
    }
    h.push_str(",residual_norm,converged\n");
    h
}

pub fn sweep_row(model: &str, param: f64, s: &SynchronizedSolution) -> String {
    let mut r = format!("{model},{},{}", fmt12(param), fmt12(s.omega_s / (2.0 * PI)));
    for i in 0..s.v.len() {
        let _ = write!(r, ",{},{},{},{}", fmt12(s.v[i]), fmt12(s.phi[i]), fmt12(s.eta[i]), index(s.k_vec[i]));
    }
    let _ = writeln!(r, ",{},1", fmt12(s.residual_norm));
    r
}

/// One row per converged point.
pub fn sweep_csv(model: &str, param: &str, n: usize, curve: &SweepCurve) -> String {
    let mut out = sweep_header(n, param);
    for (p, s) in curve.converged() {
        out.push_str(&sweep_row(model, p, s));
    }
    out
}

pub fn stability_trace_csv(param: &str, n: usize, trace: &[PolePoint]) -> String {
    let mut out = param.to_string();
    for j in 0..2 * n {
        let _ = write!(out, ",re_lambda_{j},im_lambda_{j}");
    }
    out.push_str(",max_re_nonstructural,stable\n");
    for p in trace {
        out.push_str(&fmt12(p.param));
        for l in &p.result.eigenvalues {
            let _ = write!(out, ",{},{}", fmt12(l.re), fmt12(l.im));
        }
        let _ = writeln!(out, ",{},{}", fmt12(p.result.max_re_nonstructural), u8::from(p.result.stable));
    }
    out
}

pub fn stable_intervals_csv(sr: &StableRange) -> String {
    let mut out = String::from("start_rad,end_rad\n");
    for (a, b) in &sr.intervals {
        let _ = writeln!(out, "{},{}", fmt12(*a), fmt12(*b));
    }
    out
}

pub fn boundaries_csv(sr: &StableRange) -> String {
    let mut out = String::from("stable_side_rad,unstable_side_rad,max_re_stable,max_re_unstable\n");
    for b in &sr.boundaries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt12(b.stable_side),
            fmt12(b.unstable_side),
            fmt12(b.max_re_stable),
            fmt12(b.max_re_unstable)
        );
    }
    out
}

pub fn comparison_csv(rows: &[(&str, &CurveComparison)]) -> String {
    let mut out = String::from("comparison,max_abs_eta_error_v,rms_eta_error_v,max_rel_freq_error,points,domain_lo,domain_hi\n");
    for (name, c) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{}",
            fmt12(c.max_abs_eta_error),
            fmt12(c.rms_eta_error),
            fmt12(c.max_rel_freq_error),
            c.points,
            fmt12(c.domain.0),
            fmt12(c.domain.1)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt12(-5.2e9), "-5.20000000000e9");
    }

    #[test]
    fn sweep_schema() {
        let s = SynchronizedSolution {
            delta_phi: 0.5,
            v: vec![0.4, 0.5],
            phi: vec![0.0, 0.5],
            eta: vec![2.5, 2.6],
            omega_s: 2.0 * PI * 5e9,
            k_vec: vec![Some(2), None],
            residual_norm: 1e-12,
            iterations: 3,
        };
        let h = sweep_header(2, "delta_phi_rad");
        let r = sweep_row("pw", 0.5, &s);
        assert_eq!(h.trim_end().split(',').count(), r.trim_end().split(',').count());
        assert!(r.contains(",2,") && r.contains(",-1,"));
        assert!(r.ends_with(",1\n"));
    }
}
