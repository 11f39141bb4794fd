//! Damped Newton iteration with a finite-difference Jacobian.
//!
//! The system may carry a context that is recomputed once per iteration and
//! held fixed while the Jacobian is differenced (the active piecewise
//! intervals, for the array solver).

use nalgebra::{DMatrix, DVector};

use crate::error::{OscError, Result};

pub trait NewtonSystem {
    type Ctx;

    fn context(&self, x: &[f64]) -> Result<Self::Ctx>;

    fn residual(&self, x: &[f64], ctx: &Self::Ctx) -> Result<Vec<f64>>;

    /// Cheap feasibility test applied before any residual evaluation.
    fn admissible(&self, _x: &[f64]) -> bool {
        true
    }

    /// Residual max-norm is divided by this before comparing with the tolerance.
    fn scale(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
    pub fd_rel_step: f64,
    /// Extra full steps taken after convergence while they keep reducing
    /// the residual.
    pub polish_steps: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-9,
            max_halvings: 8,
            fd_rel_step: 1e-7,
            polish_steps: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome<C> {
    pub x: Vec<f64>,
    pub ctx: C,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn max_norm(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Trial<C> {
    x: Vec<f64>,
    ctx: C,
    r: Vec<f64>,
    norm: f64,
}

fn evaluate<S: NewtonSystem>(sys: &S, x: Vec<f64>) -> Result<Trial<S::Ctx>> {
    if !sys.admissible(&x) {
        return Err(OscError::Domain("inadmissible iterate".into()));
    }
    let ctx = sys.context(&x)?;
    let r = sys.residual(&x, &ctx)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(OscError::Domain("non-finite residual".into()));
    }
    let norm = max_norm(&r) / sys.scale();
    Ok(Trial { x, ctx, r, norm })
}

pub fn jacobian<S: NewtonSystem>(sys: &S, x: &[f64], ctx: &S::Ctx, rel: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let r0 = sys.residual(x, ctx)?;
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let rp = sys.residual(&xp, ctx);
        xp[j] = x[j] - h;
        let rm = sys.residual(&xp, ctx);
        xp[j] = x[j];
        let col: Vec<f64> = match (rp, rm) {
            (Ok(p), Ok(q)) => p.iter().zip(&q).map(|(a, b)| (a - b) / (2.0 * h)).collect(),
            (Ok(p), Err(e)) if e.is_step_rejection() => p.iter().zip(&r0).map(|(a, b)| (a - b) / h).collect(),
            (Err(e), Ok(q)) if e.is_step_rejection() => r0.iter().zip(&q).map(|(a, b)| (a - b) / h).collect(),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        for (i, v) in col.into_iter().enumerate() {
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

fn newton_direction<S: NewtonSystem>(sys: &S, t: &Trial<S::Ctx>, opts: &NewtonOptions, what: &str) -> Result<DVector<f64>> {
    let jac = jacobian(sys, &t.x, &t.ctx, opts.fd_rel_step)?;
    let rhs = DVector::from_iterator(t.r.len(), t.r.iter().map(|v| -v));
    let d = jac
        .lu()
        .solve(&rhs)
        .ok_or_else(|| OscError::SingularJacobian(what.to_string()))?;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(OscError::SingularJacobian(what.to_string()));
    }
    Ok(d)
}

fn step(x: &[f64], d: &DVector<f64>, lambda: f64) -> Vec<f64> {
    x.iter().zip(d.iter()).map(|(a, b)| a + lambda * b).collect()
}

pub fn solve<S: NewtonSystem>(sys: &S, x0: &[f64], opts: &NewtonOptions, what: &str) -> Result<NewtonOutcome<S::Ctx>> {
    let mut cur = evaluate(sys, x0.to_vec())?;
    let mut iterations = 0;
    while cur.norm >= opts.tol {
        if iterations >= opts.max_iter {
            return Err(OscError::NotConverged {
                what: what.to_string(),
                iterations,
                residual: cur.norm,
                last_iterate: cur.x,
            });
        }
        iterations += 1;
        let d = newton_direction(sys, &cur, opts, what)?;
        let mut lambda = 1.0;
        let mut fallback = None;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            match evaluate(sys, step(&cur.x, &d, lambda)) {
                Ok(t) if t.norm < cur.norm => {
                    accepted = Some(t);
                    break;
                }
                Ok(t) => fallback = Some(t),
                Err(e) if e.is_step_rejection() => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        }
        cur = match accepted.or(fallback) {
            Some(t) => t,
            None => {
                return Err(OscError::NotConverged {
                    what: format!("{what} (every damped step left the admissible region)"),
                    iterations,
                    residual: cur.norm,
                    last_iterate: cur.x,
                })
            }
        };
    }
    for _ in 0..opts.polish_steps {
        let Ok(d) = newton_direction(sys, &cur, opts, what) else { break };
        match evaluate(sys, step(&cur.x, &d, 1.0)) {
            Ok(t) if t.norm < 0.5 * cur.norm => cur = t,
            _ => break,
        }
    }
    Ok(NewtonOutcome {
        x: cur.x,
        ctx: cur.ctx,
        residual_norm: cur.norm,
        iterations,
    })
}
