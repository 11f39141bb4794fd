use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use oscarray::array::{
    solve_constant_phase, sweep_injection, sweep_phase, ArraySpec, ElementModel, InjectionSource, SolveOptions,
    SweepCurve, SweepOptions,
};
use oscarray::extraction::{extract_non_pw, extract_piecewise, extract_samples, ExtractionOptions, NonPwModel, PiecewiseModel};
use oscarray::oscillator::OscillatorModel;
use oscarray::report::{self, fmt12};
use oscarray::sample_table::sample_table_string;
use oscarray::stability::{analyze, stable_range, PolePoint, StableRangeOptions};
use oscarray::validation::{compare_curves, mirror_antisymmetry};

use crate::config::{OscSource, RunConfig};
use crate::{CliError, Command, ModelKind};

/// Section and model checks that need no computation.
pub fn check_sections(cmd: Command, model: ModelKind, cfg: &RunConfig) -> Result<(), String> {
    let need = |present: bool, section: &str| {
        if present {
            Ok(())
        } else {
            Err(format!("this subcommand needs a [{section}] section"))
        }
    };
    match cmd {
        Command::Extract => Ok(()),
        Command::Solve => need(cfg.solve.is_some(), "solve"),
        Command::Sweep | Command::Stability => need(cfg.sweep.is_some(), "sweep"),
        Command::InjectSweep => need(cfg.injection.is_some(), "injection"),
        Command::Validate => {
            need(cfg.sweep.is_some(), "sweep")?;
            need(cfg.validate.is_some(), "validate")?;
            exact_oscillators(cfg).map(|_| ())
        }
    }?;
    if model == ModelKind::Exact && cmd != Command::Extract {
        exact_oscillators(cfg)?;
    }
    Ok(())
}

fn exact_oscillators(cfg: &RunConfig) -> Result<Vec<Arc<dyn OscillatorModel>>, String> {
    cfg.oscillators
        .iter()
        .enumerate()
        .map(|(i, o)| match o {
            OscSource::Vdp(p) => Ok(Arc::new(*p) as Arc<dyn OscillatorModel>),
            OscSource::Table { path, .. } => Err(format!(
                "oscillator {i} comes from sample table {}; the exact model needs analytic parameters",
                path.display()
            )),
        })
        .collect()
}

fn extraction_options(cfg: &RunConfig) -> ExtractionOptions {
    ExtractionOptions {
        steps: cfg.fd,
        anchor: cfg.anchor,
        sanity_factor: cfg.sanity_factor,
    }
}

fn build_models(cfg: &RunConfig, kind: ModelKind) -> Result<Vec<ElementModel>, CliError> {
    let opts = extraction_options(cfg);
    cfg.oscillators
        .par_iter()
        .map(|o| -> Result<ElementModel, CliError> {
            Ok(match (kind, o) {
                (ModelKind::Pw, OscSource::Vdp(p)) => ElementModel::Piecewise(Arc::new(extract_piecewise(p, &cfg.grid, opts)?)),
                (ModelKind::Pw, OscSource::Table { samples, .. }) => {
                    ElementModel::Piecewise(Arc::new(PiecewiseModel::new(samples.clone(), cfg.anchor, cfg.sanity_factor)?))
                }
                (ModelKind::Nonpw, OscSource::Vdp(p)) => ElementModel::Linearized(Arc::new(extract_non_pw(p, cfg.nonpw_eta_c, cfg.fd)?)),
                (ModelKind::Nonpw, OscSource::Table { samples, .. }) => {
                    let s = samples
                        .iter()
                        .min_by(|a, b| (a.eta_c - cfg.nonpw_eta_c).abs().total_cmp(&(b.eta_c - cfg.nonpw_eta_c).abs()))
                        .expect("tables are non-empty");
                    ElementModel::Linearized(Arc::new(NonPwModel::new(s.clone())?))
                }
                (ModelKind::Exact, OscSource::Vdp(p)) => ElementModel::Exact(Arc::new(*p)),
                (ModelKind::Exact, OscSource::Table { .. }) => unreachable!("rejected by check_sections"),
            })
        })
        .collect()
}

fn build_spec(cfg: &RunConfig, kind: ModelKind) -> Result<ArraySpec, CliError> {
    Ok(ArraySpec::new(build_models(cfg, kind)?, cfg.coupling, cfg.q, cfg.eta_q)?)
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        newton: cfg.newton,
        phase_origin: None,
    }
}

fn sweep_options(cfg: &RunConfig) -> SweepOptions {
    SweepOptions {
        solve: solve_options(cfg),
        min_step: cfg.min_step,
        ..SweepOptions::default()
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_sweep(cfg: &RunConfig, spec: &ArraySpec) -> Result<SweepCurve, CliError> {
    let s = cfg.sweep.expect("checked");
    let curve = sweep_phase(spec, &InjectionSource::none(), s.range, s.step, &sweep_options(cfg))?;
    if let Some(d) = &curve.diagnostic {
        eprintln!("warning: {d}");
    }
    if curve.converged().next().is_none() {
        return Err(CliError::Numeric("no sweep point converged".into()));
    }
    Ok(curve)
}

pub fn execute(cmd: Command, model: ModelKind, cfg: &RunConfig) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    let m = model.name();
    match cmd {
        Command::Extract => {
            let opts = extraction_options(cfg);
            let tables = cfg
                .oscillators
                .par_iter()
                .map(|o| -> Result<String, CliError> {
                    Ok(match o {
                        OscSource::Vdp(p) => sample_table_string(&extract_samples(p, &cfg.grid, opts.steps)?),
                        OscSource::Table { samples, .. } => sample_table_string(samples),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            for (i, t) in tables.iter().enumerate() {
                write(out, &format!("sample_table_{i}.csv"), t)?;
            }
        }
        Command::Solve => {
            let s = cfg.solve.expect("checked");
            let spec = build_spec(cfg, model)?;
            let inj = if s.i_s > 0.0 {
                InjectionSource::new(s.i_s, s.theta_s)?
            } else {
                InjectionSource::none()
            };
            let sol = solve_constant_phase(&spec, &inj, s.delta_phi, None, &solve_options(cfg))?;
            let verdict = analyze(&spec, &inj, &sol)?;
            let mut body = report::sweep_header(spec.n(), "delta_phi_rad");
            body.push_str(&report::sweep_row(m, s.delta_phi, &sol));
            write(out, &format!("solution_{m}.csv"), &body)?;
            println!(
                "omega_s/2pi = {} Hz, max Re lambda = {}, {}",
                fmt12(sol.omega_s / (2.0 * PI)),
                fmt12(verdict.max_re_nonstructural),
                if verdict.stable { "stable" } else { "unstable" }
            );
        }
        Command::Sweep => {
            let spec = build_spec(cfg, model)?;
            let curve = run_sweep(cfg, &spec)?;
            write(out, &format!("sweep_{m}.csv"), &report::sweep_csv(m, "delta_phi_rad", spec.n(), &curve))?;
        }
        Command::Stability => {
            let spec = build_spec(cfg, model)?;
            let curve = run_sweep(cfg, &spec)?;
            let opts = StableRangeOptions {
                solve: solve_options(cfg),
                ..StableRangeOptions::default()
            };
            let sr = stable_range(&spec, &InjectionSource::none(), &curve, &opts)?;
            write(out, &format!("stability_trace_{m}.csv"), &report::stability_trace_csv("delta_phi_rad", spec.n(), &sr.trace))?;
            write(out, &format!("stable_intervals_{m}.csv"), &report::stable_intervals_csv(&sr))?;
            write(out, &format!("stable_boundaries_{m}.csv"), &report::boundaries_csv(&sr))?;
        }
        Command::InjectSweep => {
            let j = cfg.injection.expect("checked");
            let spec = build_spec(cfg, model)?;
            let sw = sweep_injection(&spec, j.delta_phi, j.i_s, j.theta_points, &sweep_options(cfg))?;
            if let Some(d) = &sw.curve.diagnostic {
                eprintln!("warning: {d}");
            }
            // Each row carries its own source phase, so the verdicts use it.
            let pts: Vec<_> = sw.curve.converged().collect();
            let trace = pts
                .par_iter()
                .map(|(theta, s)| {
                    let inj = InjectionSource { i_s: j.i_s, theta_s: *theta };
                    Ok(PolePoint { param: *theta, result: analyze(&spec, &inj, s)? })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            write(out, &format!("injection_sweep_{m}.csv"), &report::sweep_csv(m, "theta_s_rad", spec.n(), &sw.curve))?;
            write(out, &format!("injection_stability_{m}.csv"), &report::stability_trace_csv("theta_s_rad", spec.n(), &trace))?;
            let mut summary = String::from("delta_phi_rad,i_s_a,bandwidth_hz,closure_mismatch,converged_points,gaps\n");
            let opt = |x: Option<f64>| x.map_or("nan".to_string(), fmt12);
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{}",
                fmt12(j.delta_phi),
                fmt12(j.i_s),
                opt(sw.bandwidth_hz()),
                opt(sw.closure_mismatch),
                pts.len(),
                sw.curve.gaps()
            );
            write(out, &format!("injection_summary_{m}.csv"), &summary)?;
        }
        Command::Validate => return validate(cfg),
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let v = cfg.validate.expect("checked");
    let out = &cfg.output_dir;
    let kinds = [ModelKind::Pw, ModelKind::Nonpw, ModelKind::Exact];
    let curves = kinds
        .par_iter()
        .map(|&k| {
            let spec = build_spec(cfg, k)?;
            let c = run_sweep(cfg, &spec)?;
            Ok((spec.n(), c))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    for (k, (n, c)) in kinds.iter().zip(&curves) {
        write(out, &format!("sweep_{}.csv", k.name()), &report::sweep_csv(k.name(), "delta_phi_rad", *n, c))?;
    }
    let exact = &curves[2].1;
    let pw = compare_curves(&curves[0].1, exact)?;
    let nonpw = compare_curves(&curves[1].1, exact)?;
    write(out, "validation.csv", &report::comparison_csv(&[("pw_vs_exact", &pw), ("nonpw_vs_exact", &nonpw)]))?;

    let ratio = nonpw.max_abs_eta_error / pw.max_abs_eta_error;
    let anti = mirror_antisymmetry(&curves[0].1, cfg.q);
    let mut failures = Vec::new();
    if let Some(t) = v.max_eta_error {
        if !(pw.max_abs_eta_error < t) {
            failures.push(format!("pw max eta error {:e} V >= {t:e} V", pw.max_abs_eta_error));
        }
    }
    if let Some(r) = v.min_nonpw_ratio {
        if !(ratio > r) {
            failures.push(format!("nonpw/pw error ratio {ratio:.4} <= {r}"));
        }
    }
    if let Some(t) = v.max_antisymmetry {
        match anti {
            Some(a) if a < t => {}
            Some(a) => failures.push(format!("pw antisymmetry {a:e} V >= {t:e} V")),
            None => failures.push("no oscillator pair mirrored about the reference".into()),
        }
    }
    let mut summary = String::from("pw_max_eta_error_v,nonpw_max_eta_error_v,nonpw_to_pw_ratio,pw_antisymmetry_v,passed\n");
    let _ = writeln!(
        summary,
        "{},{},{},{},{}",
        fmt12(pw.max_abs_eta_error),
        fmt12(nonpw.max_abs_eta_error),
        fmt12(ratio),
        anti.map_or("nan".to_string(), fmt12),
        u8::from(failures.is_empty())
    );
    write(out, "validation_summary.csv", &summary)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(failures.join("; ")))
    }
}
