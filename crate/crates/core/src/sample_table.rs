//! Sample-table CSV: one row per tuning sample.
//!
//! Floats are written in shortest round-trip form so a table read back
//! reproduces the model bit for bit. `i_g1`/`i_gm1` are authoritative;
//! the stored `i_gr`/`i_gi` columns must agree with them.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{OscError, Result};
use crate::extraction::AdmittanceSample;
use crate::oscillator::inverse_chain_rule;

pub const COLUMNS: [&str; 17] = [
    "eta_c", "v_o", "f_o_hz", "y_v_re", "y_v_im", "y_omega_re", "y_omega_im", "y_eta_re", "y_eta_im", "i_gr_re", "i_gr_im",
    "i_gi_re", "i_gi_im", "i_g1_re", "i_g1_im", "i_gm1_re", "i_gm1_im",
];

pub fn write_sample_table<W: Write>(mut w: W, samples: &[AdmittanceSample]) -> Result<()> {
    writeln!(w, "{}", COLUMNS.join(","))?;
    for s in samples {
        let (gr, gi) = inverse_chain_rule(s.i_g1, s.i_gm1);
        let vals = [
            s.eta_c, s.v_o, s.f_o_hz, s.y_v.re, s.y_v.im, s.y_omega.re, s.y_omega.im, s.y_eta.re, s.y_eta.im, gr.re, gr.im, gi.re, gi.im,
            s.i_g1.re, s.i_g1.im, s.i_gm1.re, s.i_gm1.im,
        ];
        let row: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn sample_table_string(samples: &[AdmittanceSample]) -> String {
    let mut buf = Vec::new();
    write_sample_table(&mut buf, samples).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn read_sample_table<R: Read>(r: R) -> Result<Vec<AdmittanceSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| OscError::Parse(e.to_string()))?.clone();
    let mut idx = [0usize; 17];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| OscError::Parse(format!("sample table is missing column '{name}'")))?;
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| OscError::Parse(e.to_string()))?;
        let mut v = [0.0f64; 17];
        for (k, &col) in idx.iter().enumerate() {
            let field = rec.get(col).unwrap_or("");
            v[k] = field.parse().map_err(|_| {
                OscError::Parse(format!("row {}: column '{}' has non-numeric value '{field}'", line + 1, COLUMNS[k]))
            })?;
        }
        let c = |i: usize| Complex64::new(v[i], v[i + 1]);
        let (gr, gi, g1, gm1) = (c(9), c(11), c(13), c(15));
        let (gr_chk, gi_chk) = inverse_chain_rule(g1, gm1);
        let scale = 1.0 + g1.norm() + gm1.norm();
        if (gr - gr_chk).norm() > 1e-9 * scale || (gi - gi_chk).norm() > 1e-9 * scale {
            return Err(OscError::Inconsistent(format!(
                "row {}: stored I_Gr/I_Gi disagree with I_G1/I_G-1 under the chain rule",
                line + 1
            )));
        }
        out.push(AdmittanceSample {
            eta_c: v[0],
            v_o: v[1],
            f_o_hz: v[2],
            y_v: c(3),
            y_omega: c(5),
            y_eta: c(7),
            i_g1: g1,
            i_gm1: gm1,
            warning: None,
        });
    }
    if out.is_empty() {
        return Err(OscError::Parse("sample table has no rows".into()));
    }
    Ok(out)
}

pub fn load_sample_table(path: &Path) -> Result<Vec<AdmittanceSample>> {
    let f = std::fs::File::open(path).map_err(|e| OscError::Io(format!("{}: {e}", path.display())))?;
    read_sample_table(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{extract_piecewise, Anchor, ExtractionOptions, PiecewiseModel, SamplingGrid};
    use crate::oscillator::VdpParams;

    #[test]
    fn round_trip_is_bit_exact() {
        let osc = VdpParams::reference_design(Some(10e-12)).unwrap();
        let g = SamplingGrid::equispaced(2.4, 4.0, 33).unwrap();
        let m = extract_piecewise(&osc, &g, ExtractionOptions::default()).unwrap();
        let text = sample_table_string(m.samples());
        assert_eq!(text.lines().count(), 34);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 17);
        let back = read_sample_table(text.as_bytes()).unwrap();
        assert_eq!(back, m.samples());
        let again = PiecewiseModel::new(back, Anchor::Left, 0.2).unwrap();
        assert_eq!(sample_table_string(again.samples()), text);
    }

    #[test]
    fn stored_chain_rule_pair() {
        // I_Gr = 0.8, I_Gi = 1.1j recombine to I_G1 = 0.95, I_G-1 = -0.15.
        let mut text = COLUMNS.join(",");
        text.push('\n');
        text.push_str("2.5,0.6,5.2e9,0.01,0,0,1e-12,0,-1e-3,0.8,0,0,1.1,0.95,0,-0.15,0\n");
        let s = read_sample_table(text.as_bytes()).unwrap();
        let (gr, gi) = s[0].injection_gains();
        assert!((gr - Complex64::new(0.8, 0.0)).norm() < 1e-15);
        assert!((gi - Complex64::new(0.0, 1.1)).norm() < 1e-15);
    }

    #[test]
    fn inconsistent_gains_rejected() {
        let mut text = COLUMNS.join(",");
        text.push('\n');
        text.push_str("2.5,0.6,5.2e9,0.01,0,0,1e-12,0,-1e-3,0.8,0,0,1.1,1,0,0,0\n");
        assert!(matches!(read_sample_table(text.as_bytes()), Err(OscError::Inconsistent(_))));
    }

    #[test]
    fn malformed_tables_rejected() {
        assert!(read_sample_table("eta_c,v_o\n1,2\n".as_bytes()).is_err());
        let mut text = COLUMNS.join(",");
        text.push('\n');
        assert!(read_sample_table(text.as_bytes()).is_err());
        text.push_str("2.5,x,5.2e9,0.01,0,0,1e-12,0,-1e-3,1,0,0,1,1,0,0,0\n");
        assert!(matches!(read_sample_table(text.as_bytes()), Err(OscError::Parse(_))));
    }
}
