//! CSV tables and run manifests.
//!
//! Numbers are written with 17 significant digits so every double survives a
//! text round trip. Lines end in `\n`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::scans::{Landscape, ScanRow};
use crate::schedule::ControlSchedule;
use crate::tdse::EnergySample;

/// Round-trip exact decimal form of a double.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Collapses an error message into one CSV-safe cell.
fn cell(text: &str) -> String {
    text.chars()
        .map(|c| if c == ',' || c == '\n' || c == '\r' { ';' } else { c })
        .collect()
}

/// `t, omega_sq_sta, omega_correction, omega_sq_total` on `samples` evenly spaced times.
pub fn schedule_csv(schedule: &ControlSchedule, samples: usize) -> Result<String> {
    let mut out = String::from("t,omega_sq_sta,omega_correction,omega_sq_total\n");
    let tf = schedule.tau_f();
    let n = samples.max(2) - 1;
    for i in 0..=n {
        let t = if i == n { tf } else { tf * i as f64 / n as f64 };
        let sta = schedule.omega_sq_sta(t)?;
        let corr = schedule.omega_correction(t)?;
        writeln!(out, "{},{},{},{}", num(t), num(sta), num(corr), num(sta + corr)).unwrap();
    }
    Ok(out)
}

/// `t, energy` trace of one simulation.
pub fn energy_csv(trace: &[EnergySample]) -> String {
    let mut out = String::from("t,energy\n");
    for s in trace {
        writeln!(out, "{},{}", num(s.t), num(s.energy)).unwrap();
    }
    out
}

/// `tau, scheme, M, fidelity[, sensitivity][, e_ratio], status`.
///
/// Optional columns appear when any row carries them. `status` is `ok` or the
/// failure message of that point.
pub fn scan_csv(rows: &[ScanRow]) -> String {
    let with_s = rows.iter().any(|r| r.sensitivity.is_some());
    let with_e = rows.iter().any(|r| r.e_ratio.is_some());
    let mut out = String::from("tau,scheme,M,fidelity");
    if with_s {
        out.push_str(",sensitivity");
    }
    if with_e {
        out.push_str(",e_ratio");
    }
    out.push_str(",status\n");
    for r in rows {
        write!(out, "{},{},{},{}", num(r.tau), r.scheme, r.components, num(r.fidelity)).unwrap();
        if with_s {
            write!(out, ",{}", num(r.sensitivity.unwrap_or(f64::NAN))).unwrap();
        }
        if with_e {
            write!(out, ",{}", num(r.e_ratio.unwrap_or(f64::NAN))).unwrap();
        }
        match &r.failure {
            None => out.push_str(",ok\n"),
            Some(msg) => writeln!(out, ",error: {}", cell(msg)).unwrap(),
        }
    }
    out
}

/// `eps, eps_over_eps2, F_true, F_parab1, F_parab2`.
pub fn landscape_csv(landscape: &Landscape) -> String {
    let mut out = String::from("eps,eps_over_eps2,F_true,F_parab1,F_parab2\n");
    for r in &landscape.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            num(r.eps),
            num(r.eps_over_eps2),
            num(r.f_true),
            num(r.f_parab1),
            num(r.f_parab2)
        )
        .unwrap();
    }
    out
}

/// Key/value results appended to a manifest under `[run]`.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, toml::Value)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.text("command", command);
        m.text("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn text(&mut self, key: &str, value: &str) -> &mut Self {
        self.entries.push((key.into(), toml::Value::String(value.into())));
        self
    }

    pub fn real(&mut self, key: &str, value: f64) -> &mut Self {
        // TOML has nan/inf literals, but keep the file friendly to other readers
        let v = if value.is_finite() {
            toml::Value::Float(value)
        } else {
            toml::Value::String(num(value))
        };
        self.entries.push((key.into(), v));
        self
    }

    pub fn int(&mut self, key: &str, value: usize) -> &mut Self {
        self.entries.push((key.into(), toml::Value::Integer(value as i64)));
        self
    }

    pub fn reals(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let arr = values.iter().map(|&v| toml::Value::Float(v)).collect();
        self.entries.push((key.into(), toml::Value::Array(arr)));
        self
    }

    /// Effective configuration followed by the `[run]` table.
    pub fn render(&self, config_toml: &str) -> String {
        let mut table = toml::Table::new();
        for (k, v) in &self.entries {
            table.insert(k.clone(), v.clone());
        }
        let mut wrapper = toml::Table::new();
        wrapper.insert("run".into(), toml::Value::Table(table));
        format!(
            "# effective configuration\n{}\n\n{}",
            config_toml.trim_end(),
            toml::to_string(&wrapper).expect("manifest serializes")
        )
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}
