//! CSV rows, summary.json, and the file writers.

use std::fs;
use std::path::Path;

use gwpd::diagnostics::DiagnosticsRecord;
use gwpd::{GaussianHagedorn, GaussianHeller};
use serde::Serialize;

use crate::Failure;

/// Column layout of a state in trajectory.csv.
pub trait StateColumns {
    fn state_header(dim: usize) -> Vec<String>;
    fn state_values(&self) -> Vec<f64>;
}

fn upper(prefix: &str, dim: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            out.push(format!("{prefix}_{i}_{j}"));
        }
    }
    out
}

fn full(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).flat_map(|i| (0..dim).map(move |j| format!("{prefix}_{i}_{j}"))).collect()
}

fn indexed(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}_{i}")).collect()
}

impl StateColumns for GaussianHeller {
    fn state_header(dim: usize) -> Vec<String> {
        let mut h = indexed("q", dim);
        h.extend(indexed("p", dim));
        h.extend(upper("ReA", dim));
        h.extend(upper("ImA", dim));
        h.push("Re_gamma".into());
        h.push("Im_gamma".into());
        h
    }

    fn state_values(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v: Vec<f64> = self.q().iter().chain(self.p().iter()).copied().collect();
        let a = self.a();
        for part in [|z: num_complex::Complex64| z.re, |z: num_complex::Complex64| z.im] {
            for i in 0..d {
                for j in i..d {
                    v.push(part(a[(i, j)]));
                }
            }
        }
        v.push(self.gamma().re);
        v.push(self.gamma().im);
        v
    }
}

impl StateColumns for GaussianHagedorn {
    fn state_header(dim: usize) -> Vec<String> {
        let mut h = indexed("q", dim);
        h.extend(indexed("p", dim));
        h.extend(full("ReQ", dim));
        h.extend(full("ImQ", dim));
        h.extend(full("ReP", dim));
        h.extend(full("ImP", dim));
        h.push("S".into());
        h.push("winding".into());
        h
    }

    fn state_values(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v: Vec<f64> = self.q().iter().chain(self.p().iter()).copied().collect();
        for m in [self.big_q(), self.big_p()] {
            for part in [|z: num_complex::Complex64| z.re, |z: num_complex::Complex64| z.im] {
                for i in 0..d {
                    for j in 0..d {
                        v.push(part(m[(i, j)]));
                    }
                }
            }
        }
        v.push(self.s());
        v.push(self.winding() as f64);
        v
    }
}

pub fn trajectory_header<W: StateColumns>(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(W::state_header(dim));
    h.extend(["norm", "E", "E_eff"].map(String::from));
    h
}

pub fn trajectory_row<W: StateColumns>(state: &W, record: &DiagnosticsRecord) -> Vec<f64> {
    let mut row = vec![record.t];
    row.extend(state.state_values());
    row.extend([record.norm, record.energy, record.effective_energy]);
    row
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

/// Writes a header and numeric rows; numbers use the shortest round-trip form.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv_to<W: std::io::Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> Result<(), Failure> {
    let io = |e: csv::Error| Failure::io(format!("cannot write coefficients: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::io(format!("cannot write coefficients: {e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct Checks {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_norm_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_e_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_e_eff_drift: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: String,
    pub scheme: String,
    pub parametrization: String,
    pub dt: f64,
    pub steps: usize,
    pub norm_drift: f64,
    #[serde(rename = "E_drift")]
    pub e_drift: f64,
    #[serde(rename = "E_eff_drift")]
    pub e_eff_drift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reversibility_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<Checks>,
    pub wall_time_seconds: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(format!("cannot encode JSON: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}
