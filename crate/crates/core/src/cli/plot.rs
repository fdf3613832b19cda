//! Standalone SVG line/scatter plots. Output is a pure function of the
//! records: no timestamps, fixed float formatting, fixed colour cycle.

use std::fmt::Write;

use super::config::ExperimentKind;
use super::report::ReportRecord;
use super::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Debug, Clone, Copy)]
struct Axes {
    x_label: &'static str,
    y_label: &'static str,
    log_x: bool,
    log_y: bool,
}

fn axes(kind: ExperimentKind) -> Axes {
    let a = |x_label, y_label, log_x, log_y| Axes { x_label, y_label, log_x, log_y };
    match kind {
        ExperimentKind::HalfplaneChain => a("ρ", "‖γ_ρKφ‖/‖φ‖", false, true),
        ExperimentKind::DecaySandwich => a("ρ", "‖u|Γ_ρ‖/‖u|Γ‖", false, true),
        ExperimentKind::ExteriorMass => a("λ", "sup λ·mass/‖u‖²", true, false),
        ExperimentKind::PhaseResidual => a("x_n", "max residual", true, true),
        ExperimentKind::SymbolClass => a("h", "sup |∂ξ^β (f_ρ − ζ)|", true, true),
        ExperimentKind::MassProfile => a("r", "L(r), Z(r)", false, false),
        ExperimentKind::ParametrixConsistency => a("h", "relative error", true, true),
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, log: bool, from: f64, to: f64) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Some(Scale { lo, hi, log, from, to })
    }

    fn map(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        self.from + (t - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..5)
            .map(|i| {
                let t = self.lo + (self.hi - self.lo) * (i as f64 + 0.5) / 5.0;
                if self.log {
                    10f64.powf(t)
                } else {
                    t
                }
            })
            .collect()
    }
}

fn usable(v: f64, log: bool) -> bool {
    v.is_finite() && (!log || v > 0.0)
}

/// Renders every curve of `records` into one SVG document.
pub fn emit_plots(records: &[ReportRecord], kind: ExperimentKind) -> Result<String, CliError> {
    if records.is_empty() {
        return Err(CliError::Plot("no records to plot".into()));
    }
    if let Some(r) = records.iter().find(|r| r.kind != kind) {
        return Err(CliError::Plot(format!("mixed kinds: expected {kind}, found {}", r.kind)));
    }
    let ax = axes(kind);
    let mut series = Vec::new();
    for r in records {
        for c in &r.curves {
            let label = if records.len() > 1 { format!("{} {}", r.key_string(), c.label) } else { c.label.clone() };
            let pts: Vec<(f64, f64)> = c
                .x
                .iter()
                .zip(&c.y)
                .map(|(x, y)| (*x, *y))
                .filter(|(x, y)| usable(*x, ax.log_x) && usable(*y, ax.log_y))
                .collect();
            let reference: Vec<(f64, f64)> = c
                .reference
                .as_ref()
                .map(|r| {
                    c.x.iter()
                        .zip(r)
                        .map(|(x, y)| (*x, *y))
                        .filter(|(x, y)| usable(*x, ax.log_x) && usable(*y, ax.log_y))
                        .collect()
                })
                .unwrap_or_default();
            series.push((label, pts, reference));
        }
    }
    let xs = series.iter().flat_map(|(_, p, r)| p.iter().chain(r).map(|q| q.0));
    let ys = series.iter().flat_map(|(_, p, r)| p.iter().chain(r).map(|q| q.1));
    let sx = Scale::new(xs, ax.log_x, LEFT, WIDTH - RIGHT)
        .ok_or_else(|| CliError::Plot("no finite points to plot".into()))?;
    let sy = Scale::new(ys, ax.log_y, HEIGHT - BOTTOM, TOP)
        .ok_or_else(|| CliError::Plot("no finite points to plot".into()))?;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, kind);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        w,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for t in sx.ticks() {
        let px = sx.map(t);
        let _ = writeln!(w, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(w, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 18.0, fmt_num(t));
    }
    for t in sy.ticks() {
        let py = sy.map(t);
        let _ = writeln!(w, r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, fmt_num(t));
    }
    let scale_note = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(ax.x_label),
        scale_note(ax.log_x)
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ax.y_label),
        scale_note(ax.log_y)
    );
    for (i, (label, pts, reference)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path = |p: &[(f64, f64)]| {
            p.iter().map(|(x, y)| format!("{:.2},{:.2}", sx.map(*x), sy.map(*y))).collect::<Vec<_>>().join(" ")
        };
        // A lone point is a scatter: no connecting or reference line.
        if pts.len() >= 2 {
            let _ = writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path(pts));
            if reference.len() >= 2 {
                let _ = writeln!(
                    w,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="5,4"/>"#,
                    path(reference)
                );
            }
        }
        for (x, y) in pts {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx.map(*x), sy.map(*y));
        }
        let ly = y1 + 14.0 + 15.0 * i as f64;
        let _ = writeln!(w, r#"<rect x="{}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, x1 - 220.0, ly - 9.0);
        let _ = writeln!(w, r#"<text x="{}" y="{ly:.2}">{}</text>"#, x1 - 205.0, escape(label));
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::super::report::{Curve, Provenance, ReportRecord};
    use super::*;
    use std::collections::BTreeMap;

    fn rec(kind: ExperimentKind, x: Vec<f64>, y: Vec<f64>, reference: Option<Vec<f64>>) -> ReportRecord {
        ReportRecord {
            kind,
            key: vec![("h".into(), 0.1)],
            values: BTreeMap::new(),
            curves: vec![Curve { label: "c".into(), x, y, reference }],
            verdicts: vec![],
            provenance: Provenance {
                model: "m".into(),
                params: BTreeMap::new(),
                grid: BTreeMap::new(),
                seed: 0,
                version: "0".into(),
                schema_version: 1,
            },
        }
    }

    #[test]
    fn zero_records_is_an_error() {
        assert!(matches!(emit_plots(&[], ExperimentKind::DecaySandwich), Err(CliError::Plot(_))));
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let a = rec(ExperimentKind::DecaySandwich, vec![0.1], vec![0.5], None);
        let b = rec(ExperimentKind::ExteriorMass, vec![4.0], vec![1.0], None);
        assert!(emit_plots(&[a.clone(), b], ExperimentKind::DecaySandwich).is_err());
        assert!(emit_plots(&[a], ExperimentKind::ExteriorMass).is_err());
    }

    #[test]
    fn decay_plot_has_dashed_reference_line() {
        let x = vec![0.05, 0.1, 0.2];
        let y: Vec<f64> = x.iter().map(|r: &f64| (-r / 0.1).exp()).collect();
        let svg = emit_plots(&[rec(ExperimentKind::DecaySandwich, x, y.clone(), Some(y))], ExperimentKind::DecaySandwich)
            .unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn single_point_is_a_bare_scatter() {
        let svg = emit_plots(
            &[rec(ExperimentKind::DecaySandwich, vec![0.1], vec![0.3], Some(vec![0.3]))],
            ExperimentKind::DecaySandwich,
        )
        .unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn output_is_byte_deterministic() {
        let r = rec(ExperimentKind::PhaseResidual, vec![1e-3, 1e-2, 1e-1], vec![1e-15, 1e-10, 1e-5], None);
        let a = emit_plots(&[r.clone()], ExperimentKind::PhaseResidual).unwrap();
        let b = emit_plots(&[r], ExperimentKind::PhaseResidual).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nonpositive_values_are_dropped_on_log_axes() {
        let r = rec(ExperimentKind::PhaseResidual, vec![1e-3, 1e-2], vec![0.0, 1e-5], None);
        let svg = emit_plots(&[r], ExperimentKind::PhaseResidual).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }
}
