//! Residual reports and their JSON / CSV serializations.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One named residual compared against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// One per-point row backing a check (the CSV detail format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub check: String,
    pub witness_f: String,
    pub witness_g: String,
    pub point: Vec<f64>,
    pub value: f64,
    pub residual: f64,
}

/// Named residuals, tolerances and verdicts of one test suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub details: Vec<DetailRow>,
    pub warnings: Vec<String>,
    /// Hypotheses the suite relies on but cannot verify at sample scale.
    pub assumptions: Vec<String>,
}

impl ResidualReport {
    pub fn new(suite: impl Into<String>) -> Self {
        Self {
            suite: suite.into(),
            ..Default::default()
        }
    }

    /// Adds a check that passes iff `residual < tol`.
    pub fn check(&mut self, name: impl Into<String>, residual: f64, tol: f64) -> &mut Self {
        let pass = residual < tol;
        self.push_check(name, residual, tol, pass)
    }

    pub fn push_check(
        &mut self,
        name: impl Into<String>,
        residual: f64,
        tol: f64,
        pass: bool,
    ) -> &mut Self {
        self.checks.push(Check {
            name: name.into(),
            residual,
            tol,
            pass,
        });
        self
    }

    pub fn detail(&mut self, row: DetailRow) {
        self.details.push(row);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn assume(&mut self, msg: impl Into<String>) {
        self.assumptions.push(msg.into());
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Residual of the named check, NaN if absent.
    pub fn residual(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |c| c.residual)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }

    /// Worst detail row of a check.
    pub fn witness(&self, check: &str) -> Option<&DetailRow> {
        self.details
            .iter()
            .filter(|d| d.check == check)
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "suite",
    "witness_f",
    "witness_g",
    "point",
    "value",
    "residual",
    "tol",
    "pass",
];

/// Writes detail rows of all reports as CSV. Rows inherit tol/pass from their check.
pub fn write_csv<W: Write>(reports: &[&ResidualReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for report in reports {
        for row in &report.details {
            let (tol, pass) = report
                .get(&row.check)
                .map_or((f64::NAN, true), |c| (c.tol, c.pass));
            let point = row
                .point
                .iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(" ");
            w.write_record([
                format!("{}/{}", report.suite, row.check),
                row.witness_f.clone(),
                row.witness_g.clone(),
                point,
                fmt_f64(row.value),
                fmt_f64(row.residual),
                fmt_f64(tol),
                pass.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Float formatting used by every artifact: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Pretty JSON formatter that writes every float with 17 significant digits.
struct FixedDigits<'a> {
    inner: serde_json::ser::PrettyFormatter<'a>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.inner.$name(writer $(, $arg)*)
            }
        )*
    };
}

impl serde_json::ser::Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

/// Serializes `value` as pretty JSON with fixed float formatting. Non-finite floats become `null`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        FixedDigits {
            inner: serde_json::ser::PrettyFormatter::new(),
        },
    );
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_is_conjunction() {
        let mut r = ResidualReport::new("demo");
        r.check("a", 0.0, 1e-12);
        assert!(r.passed());
        r.check("b", 2.0, 1.0);
        assert!(!r.passed());
        assert_eq!(r.residual("b"), 2.0);
        assert!(r.residual("missing").is_nan());
    }

    #[test]
    fn json_uses_seventeen_digits() {
        let mut r = ResidualReport::new("demo");
        r.check("third", 1.0 / 3.0, 0.5);
        let s = to_json_string(&r).unwrap();
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
        let back: ResidualReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.checks[0].residual, 1.0 / 3.0);
    }

    #[test]
    fn csv_has_documented_columns() {
        let mut r = ResidualReport::new("laws");
        r.check("identity", 0.0, 1e-12);
        r.detail(DetailRow {
            check: "identity".into(),
            witness_f: "phi".into(),
            witness_g: String::new(),
            point: vec![1.0, 2.0],
            value: 0.0,
            residual: 0.0,
        });
        let mut out = Vec::new();
        write_csv(&[&r], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("laws/identity,phi,,"));
    }
}
