//! TOML run configuration. Every physical quantity carries its unit in the
//! key name. Everything here is checked before any computation starts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use oscarray::coupling::{CouplingParams, CouplingTopology};
use oscarray::extraction::{AdmittanceSample, Anchor, FdSteps, SamplingGrid};
use oscarray::newton::NewtonOptions;
use oscarray::oscillator::{calibrate_v_bi, VaractorModel, VdpParams};
use oscarray::sample_table::load_sample_table;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: Option<PathBuf>,
    #[serde(default)]
    coupling: RawCoupling,
    #[serde(rename = "oscillator")]
    oscillators: Vec<RawOscillator>,
    #[serde(default)]
    grid: RawGrid,
    array: RawArray,
    #[serde(default)]
    solver: RawSolver,
    sweep: Option<RawSweep>,
    solve: Option<RawSolve>,
    injection: Option<RawInjection>,
    validate: Option<RawValidate>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawCoupling {
    z_o_ohm: f64,
    psi_o_deg: f64,
    f_ref_ghz: f64,
    r_s_ohm: f64,
    r_p_ohm: f64,
    topology: String,
}

impl Default for RawCoupling {
    fn default() -> Self {
        Self {
            z_o_ohm: 50.0,
            psi_o_deg: 360.0,
            f_ref_ghz: 5.2,
            r_s_ohm: 1250.0,
            r_p_ohm: 300.0,
            topology: "loaded-line".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOscillator {
    count: usize,
    sample_table: Option<PathBuf>,
    a_s: f64,
    b_a_per_v3: f64,
    l_nh: f64,
    c_jo_pf: f64,
    m: f64,
    v_bi_v: Option<f64>,
    c_out_pf: Option<f64>,
    r_load_ohm: f64,
    calibrate_eta_v: f64,
    calibrate_f_ghz: f64,
}

impl Default for RawOscillator {
    fn default() -> Self {
        Self {
            count: 1,
            sample_table: None,
            a_s: -0.023,
            b_a_per_v3: 0.01,
            l_nh: 1.53,
            c_jo_pf: 0.72,
            m: 0.5,
            v_bi_v: None,
            c_out_pf: None,
            r_load_ohm: 50.0,
            calibrate_eta_v: 2.5,
            calibrate_f_ghz: 5.2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    eta_min_v: f64,
    eta_max_v: f64,
    p: usize,
    anchor: String,
    sanity_factor: f64,
}

impl Default for RawGrid {
    fn default() -> Self {
        Self {
            eta_min_v: 2.4,
            eta_max_v: 4.0,
            p: 33,
            anchor: "left".into(),
            sanity_factor: 0.2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    q: usize,
    eta_q_v: f64,
    nonpw_eta_c_v: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    tol: f64,
    max_iter: usize,
    max_halvings: usize,
    fd_rel_v: f64,
    fd_rel_omega: f64,
    fd_eta_v: f64,
    min_step_rad: f64,
}

impl Default for RawSolver {
    fn default() -> Self {
        let fd = FdSteps::default();
        let n = NewtonOptions::default();
        Self {
            tol: n.tol,
            max_iter: n.max_iter,
            max_halvings: n.max_halvings,
            fd_rel_v: fd.rel_v,
            fd_rel_omega: fd.rel_omega,
            fd_eta_v: fd.eta,
            min_step_rad: 1e-3,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    dphi_min_rad: f64,
    dphi_max_rad: f64,
    dphi_step_rad: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolve {
    dphi_rad: f64,
    #[serde(default)]
    i_s_ma: f64,
    #[serde(default)]
    theta_s_rad: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInjection {
    dphi_rad: f64,
    i_s_ma: f64,
    #[serde(default = "default_theta_points")]
    theta_points: usize,
}

fn default_theta_points() -> usize {
    145
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidate {
    max_eta_error_v: Option<f64>,
    min_nonpw_ratio: Option<f64>,
    max_antisymmetry_v: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum OscSource {
    Vdp(VdpParams),
    Table { path: PathBuf, samples: Vec<AdmittanceSample> },
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSpec {
    pub range: (f64, f64),
    pub step: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveSpec {
    pub delta_phi: f64,
    pub i_s: f64,
    pub theta_s: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct InjectionSpec {
    pub delta_phi: f64,
    pub i_s: f64,
    pub theta_points: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateSpec {
    pub max_eta_error: Option<f64>,
    pub min_nonpw_ratio: Option<f64>,
    pub max_antisymmetry: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub coupling: CouplingParams,
    pub oscillators: Vec<OscSource>,
    pub grid: SamplingGrid,
    pub anchor: Anchor,
    pub sanity_factor: f64,
    pub q: usize,
    pub eta_q: f64,
    pub nonpw_eta_c: f64,
    pub newton: NewtonOptions,
    pub fd: FdSteps,
    pub min_step: f64,
    pub sweep: Option<SweepSpec>,
    pub solve: Option<SolveSpec>,
    pub injection: Option<InjectionSpec>,
    pub validate: Option<ValidateSpec>,
}

fn positive(name: &str, x: f64) -> Result<f64, String> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{name} must be positive and finite, got {x}"))
    }
}

fn finite(name: &str, x: f64) -> Result<f64, String> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{name} must be finite, got {x}"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths inside the config resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| format!("config: {e}"))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let c = &raw.coupling;
        let topology = match c.topology.as_str() {
            "loaded-line" => CouplingTopology::LoadedLine,
            "pi" => CouplingTopology::Pi,
            other => return Err(format!("coupling.topology must be 'loaded-line' or 'pi', got '{other}'")),
        };
        let coupling = CouplingParams::new(
            c.z_o_ohm,
            c.psi_o_deg * PI / 180.0,
            c.f_ref_ghz * 1e9,
            c.r_s_ohm,
            c.r_p_ohm,
            topology,
        )
        .map_err(|e| format!("coupling: {e}"))?;

        let mut oscillators = Vec::new();
        for (idx, o) in raw.oscillators.iter().enumerate() {
            if o.count == 0 {
                return Err(format!("oscillator entry {idx}: count must be at least 1"));
            }
            let src = match &o.sample_table {
                Some(p) => {
                    let path = resolve(p);
                    let samples = load_sample_table(&path).map_err(|e| format!("oscillator entry {idx}: {e}"))?;
                    OscSource::Table { path, samples }
                }
                None => {
                    let l = positive("l_nh", o.l_nh)? * 1e-9;
                    let c_jo = positive("c_jo_pf", o.c_jo_pf)? * 1e-12;
                    let m = positive("m", o.m)?;
                    let v_bi = match o.v_bi_v {
                        Some(v) => v,
                        None => calibrate_v_bi(c_jo, m, l, o.calibrate_eta_v, o.calibrate_f_ghz * 1e9)
                            .map_err(|e| format!("oscillator entry {idx}: {e}"))?,
                    };
                    let varactor = VaractorModel::new(c_jo, m, v_bi).map_err(|e| format!("oscillator entry {idx}: {e}"))?;
                    let c_out = o.c_out_pf.map(|c| positive("c_out_pf", c).map(|c| c * 1e-12)).transpose()?;
                    let g_load = 1.0 / positive("r_load_ohm", o.r_load_ohm)?;
                    OscSource::Vdp(
                        VdpParams::new(o.a_s, o.b_a_per_v3, l, varactor, c_out, g_load)
                            .map_err(|e| format!("oscillator entry {idx}: {e}"))?,
                    )
                }
            };
            oscillators.extend(std::iter::repeat_n(src, o.count));
        }
        let n = oscillators.len();
        if n < 2 {
            return Err(format!("at least 2 oscillators are required, got {n}"));
        }

        let g = &raw.grid;
        let grid = SamplingGrid::equispaced(finite("eta_min_v", g.eta_min_v)?, finite("eta_max_v", g.eta_max_v)?, g.p)
            .map_err(|e| format!("grid: {e}"))?;
        if g.p < 2 {
            return Err("grid.p must be at least 2".into());
        }
        let anchor = match g.anchor.as_str() {
            "left" => Anchor::Left,
            "nearest" => Anchor::Nearest,
            other => return Err(format!("grid.anchor must be 'left' or 'nearest', got '{other}'")),
        };
        let sanity_factor = positive("grid.sanity_factor", g.sanity_factor)?;

        let a = &raw.array;
        if a.q >= n {
            return Err(format!("array.q = {} out of range for {n} oscillators (indices start at 0)", a.q));
        }
        let eta_q = finite("array.eta_q_v", a.eta_q_v)?;
        let nonpw_eta_c = finite("array.nonpw_eta_c_v", a.nonpw_eta_c_v.unwrap_or(eta_q))?;

        let s = &raw.solver;
        if s.max_iter == 0 {
            return Err("solver.max_iter must be at least 1".into());
        }
        let newton = NewtonOptions {
            max_iter: s.max_iter,
            tol: positive("solver.tol", s.tol)?,
            max_halvings: s.max_halvings,
            ..NewtonOptions::default()
        };
        let fd = FdSteps {
            rel_v: positive("solver.fd_rel_v", s.fd_rel_v)?,
            rel_omega: positive("solver.fd_rel_omega", s.fd_rel_omega)?,
            eta: positive("solver.fd_eta_v", s.fd_eta_v)?,
        };
        let min_step = positive("solver.min_step_rad", s.min_step_rad)?;

        let sweep = raw
            .sweep
            .map(|w| -> Result<SweepSpec, String> {
                let lo = finite("sweep.dphi_min_rad", w.dphi_min_rad)?;
                let hi = finite("sweep.dphi_max_rad", w.dphi_max_rad)?;
                if hi < lo {
                    return Err("sweep.dphi_max_rad is below sweep.dphi_min_rad".into());
                }
                Ok(SweepSpec {
                    range: (lo, hi),
                    step: positive("sweep.dphi_step_rad", w.dphi_step_rad)?,
                })
            })
            .transpose()?;
        let solve = raw
            .solve
            .map(|w| -> Result<SolveSpec, String> {
                if !(w.i_s_ma >= 0.0) {
                    return Err("solve.i_s_ma must be non-negative".into());
                }
                Ok(SolveSpec {
                    delta_phi: finite("solve.dphi_rad", w.dphi_rad)?,
                    i_s: w.i_s_ma * 1e-3,
                    theta_s: finite("solve.theta_s_rad", w.theta_s_rad)?,
                })
            })
            .transpose()?;
        let injection = raw
            .injection
            .map(|w| -> Result<InjectionSpec, String> {
                if w.theta_points < 2 {
                    return Err("injection.theta_points must be at least 2".into());
                }
                Ok(InjectionSpec {
                    delta_phi: finite("injection.dphi_rad", w.dphi_rad)?,
                    i_s: positive("injection.i_s_ma", w.i_s_ma)? * 1e-3,
                    theta_points: w.theta_points,
                })
            })
            .transpose()?;
        let validate = raw
            .validate
            .map(|w| -> Result<ValidateSpec, String> {
                Ok(ValidateSpec {
                    max_eta_error: w.max_eta_error_v.map(|r| positive("validate.max_eta_error_v", r)).transpose()?,
                    min_nonpw_ratio: w.min_nonpw_ratio.map(|r| positive("validate.min_nonpw_ratio", r)).transpose()?,
                    max_antisymmetry: w.max_antisymmetry_v.map(|r| positive("validate.max_antisymmetry_v", r)).transpose()?,
                })
            })
            .transpose()?;

        Ok(Self {
            output_dir: resolve(&raw.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            coupling,
            oscillators,
            grid,
            anchor,
            sanity_factor,
            q: a.q,
            eta_q,
            nonpw_eta_c,
            newton,
            fd,
            min_step,
            sweep,
            solve,
            injection,
            validate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[oscillator]]
count = 3

[array]
q = 1
eta_q_v = 2.5
"#;

    #[test]
    fn defaults_describe_reference_array() {
        let c = RunConfig::parse(MINIMAL, Path::new("/tmp")).unwrap();
        assert_eq!(c.oscillators.len(), 3);
        assert_eq!(c.grid.len(), 33);
        assert_eq!(c.coupling, CouplingParams::reference_design());
        let OscSource::Vdp(p) = &c.oscillators[0] else { panic!() };
        let r = VdpParams::reference_design(None).unwrap();
        assert!((p.varactor.v_bi - r.varactor.v_bi).abs() < 1e-12);
        assert_eq!(c.output_dir, Path::new("/tmp/out"));
    }

    #[test]
    fn unit_conversion() {
        let text = format!("{MINIMAL}\n[solve]\ndphi_rad = 0.5\ni_s_ma = 0.25\n");
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.solve.unwrap().i_s, 0.25e-3);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "not toml at all [",
            "[[oscillator]]\n[array]\nq = 0\neta_q_v = 2.5\n",
            &MINIMAL.replace("q = 1", "q = 3"),
            &format!("{MINIMAL}\n[grid]\np = 1\n"),
            &format!("{MINIMAL}\n[coupling]\ntopology = \"star\"\n"),
            &format!("{MINIMAL}\nunknown_key = 1\n"),
            &MINIMAL.replace("count = 3", "count = 3\nsample_table = \"does-not-exist.csv\""),
        ] {
            assert!(RunConfig::parse(bad, Path::new("/nonexistent")).is_err(), "{bad}");
        }
    }
}
