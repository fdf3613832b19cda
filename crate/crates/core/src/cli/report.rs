//! Report records, verdicts and their CSV/JSON serializations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::config::{ExperimentKind, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// `|measured − target| ≤ tolerance`.
    Within,
    /// `measured ≥ target`.
    AtLeast,
    /// `measured ≤ target`.
    AtMost,
}

/// A pass/fail judgement. `margin` is positive exactly when it passes (or
/// zero on the boundary); `tolerance` is the slack granted by the criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub relation: Relation,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub margin: f64,
    pub passed: bool,
}

impl Verdict {
    fn build(name: &str, relation: Relation, measured: f64, target: f64, tolerance: f64, margin: f64) -> Self {
        Verdict {
            name: name.to_string(),
            relation,
            measured,
            target,
            tolerance,
            margin,
            passed: margin.is_finite() && margin >= 0.0,
        }
    }

    pub fn within(name: &str, measured: f64, target: f64, tolerance: f64) -> Self {
        Self::build(name, Relation::Within, measured, target, tolerance, tolerance - (measured - target).abs())
    }

    pub fn at_least(name: &str, measured: f64, bound: f64) -> Self {
        Self::build(name, Relation::AtLeast, measured, bound, 0.0, measured - bound)
    }

    pub fn at_most(name: &str, measured: f64, bound: f64) -> Self {
        Self::build(name, Relation::AtMost, measured, bound, 0.0, bound - measured)
    }
}

/// A curve carried by a record, used for plots and the series CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Reference values at the same abscissae (drawn dashed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub grid: BTreeMap<String, f64>,
    pub seed: u64,
    pub version: String,
    pub schema_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRecord {
    pub kind: ExperimentKind,
    /// Input key tuple in sweep order, e.g. `[("h", 0.1), ("rho", 0.05)]`.
    pub key: Vec<(String, f64)>,
    pub values: BTreeMap<String, f64>,
    pub curves: Vec<Curve>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
}

impl ReportRecord {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn key_string(&self) -> String {
        key_string(&self.key)
    }
}

pub fn key_string(key: &[(String, f64)]) -> String {
    let parts: Vec<String> = key.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("({})", parts.join(", "))
}

/// Shortest round-trip text; exponent form outside [1e-4, 1e15).
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// One row per record: key columns, value columns (sorted), verdict columns.
/// Columns come from the union over records so that every row has the same
/// header.
pub fn write_records_csv<W: Write>(records: &[ReportRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let key_cols: Vec<String> = records.first().map(|r| r.key.iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default();
    let value_cols: BTreeSet<&String> = records.iter().flat_map(|r| r.values.keys()).collect();
    let mut verdict_cols: Vec<&String> = Vec::new();
    for r in records {
        for v in &r.verdicts {
            if !verdict_cols.contains(&&v.name) {
                verdict_cols.push(&v.name);
            }
        }
    }
    let mut header = vec!["schema_version".to_string(), "kind".to_string()];
    header.extend(key_cols.iter().cloned());
    header.extend(value_cols.iter().map(|s| s.to_string()));
    for v in &verdict_cols {
        header.push(format!("{v}.passed"));
        header.push(format!("{v}.margin"));
    }
    header.push("passed".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![SCHEMA_VERSION.to_string(), r.kind.to_string()];
        row.extend(r.key.iter().map(|(_, v)| fmt_f64(*v)));
        row.extend(value_cols.iter().map(|c| r.values.get(*c).map(|v| fmt_f64(*v)).unwrap_or_default()));
        for name in &verdict_cols {
            match r.verdicts.iter().find(|v| &&v.name == name) {
                Some(v) => {
                    row.push(v.passed.to_string());
                    row.push(fmt_f64(v.margin));
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        row.push(r.passed().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Long format: key columns, curve label, x, y, reference.
pub fn write_curves_csv<W: Write>(records: &[ReportRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let key_cols: Vec<String> = records.first().map(|r| r.key.iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default();
    let mut header = vec!["schema_version".to_string()];
    header.extend(key_cols);
    header.extend(["curve", "x", "y", "reference"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        for c in &r.curves {
            for i in 0..c.x.len() {
                let mut row = vec![SCHEMA_VERSION.to_string()];
                row.extend(r.key.iter().map(|(_, v)| fmt_f64(*v)));
                row.push(c.label.clone());
                row.push(fmt_f64(c.x[i]));
                row.push(fmt_f64(c.y[i]));
                row.push(c.reference.as_ref().map(|v| fmt_f64(v[i])).unwrap_or_default());
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a, C: Serialize> {
    pub schema_version: u32,
    pub name: &'a str,
    pub kind: ExperimentKind,
    pub config: &'a C,
    pub passed: bool,
    pub verdicts: usize,
    pub failed: usize,
    pub records: &'a [ReportRecord],
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(h: f64, verdicts: Vec<Verdict>) -> ReportRecord {
        ReportRecord {
            kind: ExperimentKind::DecaySandwich,
            key: vec![("h".into(), h)],
            values: BTreeMap::from([("slope_h".into(), -1.0)]),
            curves: vec![Curve { label: "ratio".into(), x: vec![0.1, 0.2], y: vec![0.5, 0.25], reference: None }],
            verdicts,
            provenance: Provenance {
                model: "halfplane-unit".into(),
                params: BTreeMap::new(),
                grid: BTreeMap::new(),
                seed: 0,
                version: "test".into(),
                schema_version: SCHEMA_VERSION,
            },
        }
    }

    #[test]
    fn verdict_margins_have_the_sign_of_the_outcome() {
        let v = Verdict::within("slope", -0.95, -1.0, 0.1);
        assert!(v.passed && (v.margin - 0.05).abs() < 1e-12);
        let v = Verdict::within("slope", -1.2, -1.0, 0.1);
        assert!(!v.passed && v.margin < 0.0);
        assert!(Verdict::at_least("order", 4.6, 4.5).passed);
        assert!(!Verdict::at_least("order", 4.4, 4.5).passed);
        assert!(Verdict::at_most("residual", 1e-13, 1e-12).passed);
        assert!(!Verdict::at_most("residual", f64::NAN, 1e-12).passed);
        assert!(Verdict::at_most("zero", 0.0, 0.0).passed);
    }

    #[test]
    fn csv_has_fixed_columns_and_one_row_per_record() {
        let recs = vec![
            record(0.1, vec![Verdict::within("slope", -1.0, -1.0, 1e-6)]),
            record(0.05, vec![Verdict::within("slope", -0.5, -1.0, 1e-6)]),
        ];
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "schema_version,kind,h,slope_h,slope.passed,slope.margin,passed");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",true"));
        assert!(lines[2].ends_with(",false"));
    }

    #[test]
    fn small_and_large_numbers_use_exponents() {
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(2.5e-82), "2.5e-82");
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(-3e20), "-3e20");
        assert_eq!(fmt_f64(2.5e-82).parse::<f64>().unwrap(), 2.5e-82);
    }

    #[test]
    fn curve_csv_is_long_format() {
        let recs = vec![record(0.1, vec![])];
        let mut buf = Vec::new();
        write_curves_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("schema_version,h,curve,x,y,reference\n1,0.1,ratio,0.1,0.5,\n"));
    }
}
