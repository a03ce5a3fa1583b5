//! Text formats for pulses, traces, truth tables, populations and sweeps.
//!
//! Every file starts with a `#` header carrying the crate version, the
//! SHA-256 of the configuration and the seed. Floats are written with
//! `{:e}`, the shortest representation that parses back to the same value,
//! so reading and rewriting a pulse file reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::control::{ControlField, TimeGrid};
use crate::error::{Error, Result};
use crate::gates::TruthTable;
use crate::hamiltonian::Quadrature;
use crate::krotov::ConvergenceTrace;
use crate::noise::SweepRow;
use crate::propagator::Trajectory;
use crate::register::AtomRegister;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(config_sha256: Option<String>, seed: Option<u64>) -> Self {
        Provenance {
            version: VERSION.to_string(),
            config_sha256,
            seed,
        }
    }

    fn write_header(&self, out: &mut String, kind: &str) {
        let opt = |s: Option<String>| s.unwrap_or_else(|| "none".into());
        writeln!(out, "# rydopt {kind}").unwrap();
        writeln!(out, "# version: {}", self.version).unwrap();
        writeln!(out, "# config_sha256: {}", opt(self.config_sha256.clone())).unwrap();
        writeln!(out, "# seed: {}", opt(self.seed.map(|s| s.to_string()))).unwrap();
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn write_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:e}").unwrap();
    }
    out.push('\n');
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseFile {
    pub provenance: Provenance,
    pub grid: TimeGrid,
    pub fields: Vec<ControlField>,
}

impl PulseFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.provenance.write_header(&mut out, "pulses");
        writeln!(out, "# duration_us: {:e}", self.grid.duration()).unwrap();
        writeln!(out, "# n_steps: {}", self.grid.n_steps()).unwrap();
        writeln!(out, "# units: rad/us").unwrap();
        out.push_str("# columns: t_us");
        for f in &self.fields {
            write!(out, " {}:{}", f.channel, f.quadrature).unwrap();
        }
        out.push('\n');
        for k in 0..self.grid.n_steps() {
            let row = std::iter::once(self.grid.midpoint(k)).chain(self.fields.iter().map(|f| f.values[k]));
            write_row(&mut out, row);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once(':') {
                    header.insert(k.trim().to_string(), (ln, v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(ln, format!("bad number `{t}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
                return Err(parse_err(ln, format!("non-finite value {v}")));
            }
            rows.push((ln, vals));
        }
        let get = |key: &str| {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| parse_err(0, format!("missing header field `{key}`")))
        };
        let opt = |s: String| (s != "none").then_some(s);
        let (ln, seed) = get("seed")?;
        let seed = opt(seed)
            .map(|s| s.parse::<u64>().map_err(|e| parse_err(ln, format!("bad seed: {e}"))))
            .transpose()?;
        let provenance = Provenance {
            version: get("version")?.1,
            config_sha256: opt(get("config_sha256")?.1),
            seed,
        };
        let (ln, d) = get("duration_us")?;
        let duration: f64 = d.parse().map_err(|e| parse_err(ln, format!("bad duration: {e}")))?;
        let (ln, n) = get("n_steps")?;
        let n_steps: usize = n.parse().map_err(|e| parse_err(ln, format!("bad n_steps: {e}")))?;
        let grid = TimeGrid::new(duration, n_steps).map_err(|e| parse_err(ln, e.to_string()))?;
        let (ln, units) = get("units")?;
        if units != "rad/us" {
            return Err(parse_err(ln, format!("unsupported units `{units}`")));
        }
        let (ln, cols) = get("columns")?;
        let mut cols = cols.split_whitespace();
        if cols.next() != Some("t_us") {
            return Err(parse_err(ln, "first column must be t_us"));
        }
        let mut fields = Vec::new();
        for c in cols {
            let (channel, q) = c
                .rsplit_once(':')
                .ok_or_else(|| parse_err(ln, format!("column `{c}` lacks a quadrature")))?;
            let quadrature = match q {
                "re" => Quadrature::Re,
                "im" => Quadrature::Im,
                other => return Err(parse_err(ln, format!("unknown quadrature `{other}`"))),
            };
            fields.push(ControlField::new(channel, quadrature, Vec::with_capacity(n_steps)));
        }
        if rows.len() != n_steps {
            return Err(parse_err(
                rows.last().map_or(0, |r| r.0),
                format!("expected {n_steps} rows, found {}", rows.len()),
            ));
        }
        for (ln, row) in rows {
            if row.len() != fields.len() + 1 {
                return Err(parse_err(
                    ln,
                    format!("expected {} columns, found {}", fields.len() + 1, row.len()),
                ));
            }
            for (f, v) in fields.iter_mut().zip(&row[1..]) {
                f.values.push(*v);
            }
        }
        Ok(PulseFile {
            provenance,
            grid,
            fields,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

pub fn trace_text(trace: &ConvergenceTrace, prov: &Provenance) -> String {
    let mut out = String::new();
    prov.write_header(&mut out, "convergence trace");
    let reason = serde_json::to_string(&trace.stop_reason).unwrap();
    writeln!(out, "# stop_reason: {}", reason.trim_matches('"')).unwrap();
    if let Some(phi) = trace.phi_1 {
        writeln!(out, "# phi_1: {phi:e}").unwrap();
    }
    writeln!(out, "# columns: iteration j_t g_a j lambda_scale").unwrap();
    for r in &trace.records {
        write!(out, "{} ", r.iteration).unwrap();
        write_row(&mut out, [r.j_t, r.g_a, r.j, r.lambda_scale]);
    }
    out
}

pub fn truth_table_text(table: &TruthTable, prov: &Provenance) -> String {
    let mut out = String::new();
    prov.write_header(&mut out, "truth table");
    writeln!(out, "# rows: final state, columns: initial state").unwrap();
    writeln!(out, "# columns: final {}", table.labels.join(" ")).unwrap();
    for (label, row) in table.labels.iter().zip(&table.probs) {
        write!(out, "{label} ").unwrap();
        write_row(&mut out, row.iter().copied());
    }
    out
}

/// Norm and summed Rydberg population over time for every input.
pub fn populations_text(
    reg: &AtomRegister,
    labels: &[String],
    trajectories: &[Trajectory],
    prov: &Provenance,
) -> String {
    let mut out = String::new();
    prov.write_header(&mut out, "populations");
    out.push_str("# columns: t_us");
    for l in labels {
        write!(out, " norm[{l}] rydberg[{l}]").unwrap();
    }
    out.push('\n');
    let series: Vec<(Vec<f64>, Vec<f64>)> = trajectories
        .iter()
        .map(|t| (t.norm(), t.rydberg_population(reg)))
        .collect();
    if let Some(first) = trajectories.first() {
        for (k, t) in first.times.iter().enumerate() {
            let row = std::iter::once(*t).chain(series.iter().flat_map(|(n, r)| [n[k] * n[k], r[k]]));
            write_row(&mut out, row);
        }
    }
    out
}

pub fn sweep_text(channel: &str, unit: &str, rows: &[SweepRow], prov: &Provenance) -> String {
    let mut out = String::new();
    prov.write_header(&mut out, "noise sweep");
    writeln!(out, "# channel: {channel}").unwrap();
    writeln!(out, "# columns: value[{unit}] mean_infidelity std_error n_runs").unwrap();
    for r in rows {
        write_row(&mut out, [r.value, r.mean_infidelity, r.std_error]);
        out.pop();
        writeln!(out, " {}", r.n_runs).unwrap();
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PulseFile {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        PulseFile {
            provenance: Provenance::new(Some("ab".repeat(32)), Some(7)),
            grid,
            fields: vec![
                ControlField::new("Omega_p", Quadrature::Re, vec![0.1, 1.0 / 3.0, -2.5e-17, 62.83185307179586]),
                ControlField::new("Omega_p", Quadrature::Im, vec![0.0, 1e300, -0.0, 5.0]),
            ],
        }
    }

    #[test]
    fn pulse_round_trip_is_exact() {
        let p = sample();
        let text = p.to_text();
        let back = PulseFile::parse(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.fields[0].values, p.fields[0].values);
        assert_eq!(back.provenance, p.provenance);
        assert_eq!(back.grid, p.grid);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let text = sample().to_text().replace("1e300", "abc");
        match PulseFile::parse(&text) {
            Err(Error::Parse { line, .. }) => assert!(line > 5),
            other => panic!("{other:?}"),
        }
        let full = sample().to_text();
        let mut lines: Vec<&str> = full.lines().collect();
        lines.pop();
        assert!(PulseFile::parse(&lines.join("\n")).is_err());
        let text = sample().to_text().replace("Omega_p:im", "Omega_p:xx");
        assert!(PulseFile::parse(&text).is_err());
    }
}
