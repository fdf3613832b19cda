//! One runner per experiment kind. Sweep points run on the ambient rayon
//! pool; `collect` keeps input order so the merge is deterministic.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use super::config::{ExperimentKind, PhaseChoice, Resolved, SourceKind};
use super::report::{key_string, Curve, Provenance, ReportRecord, Verdict};
use super::CliError;
use crate::agmon::LevelSet;
use crate::fcalc::{exterior_mass, mass_profile_comparison, MassProfile};
use crate::halfplane::{apply_halfplane_poisson, verify_lower_chain, BoundaryFunction};
use crate::hjphase::{apply_poisson_parametrix, phase_residual, solve_phase_series, Amplitude, PhaseKind};
use crate::models::{Geometry, ModelProblem};
use crate::quantize::{build_cutoff_b, symbol_class_check, ClassBox};
use crate::solver::{
    assemble_separable_mode, decay_fit, poisson_bvp, sandwich_constants, solve_transverse_modes, trace_at,
    BoundaryTrace, BvpOptions, EigenMode,
};
use crate::stats::{isotonic_nondecreasing, loglog_fit};
use crate::{Complex64, Error};

/// Growth allowed by the monotone-regression trend test of exterior-mass.
pub const TREND_FACTOR: f64 = 2.0;

/// Relative roundoff allowed in each step of the half-plane chain.
const CHAIN_ROUNDOFF: f64 = 1e-10;

type Key = Vec<(String, f64)>;

/// Records plus auxiliary files (name, bytes) written next to them.
#[derive(Debug, Default)]
pub struct Output {
    pub records: Vec<ReportRecord>,
    pub extra: Vec<(String, Vec<u8>)>,
}

pub struct Ctx<'a> {
    pub kind: ExperimentKind,
    pub model: &'a ModelProblem,
    pub r: &'a Resolved,
    pub provenance: Provenance,
}

fn key(pairs: &[(&str, f64)]) -> Key {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Ctx<'_> {
    fn err(&self, key: &Key, source: Error) -> CliError {
        CliError::Module { experiment: self.r.name.clone(), key: key_string(key), source }
    }

    fn record(&self, key: Key, values: BTreeMap<String, f64>, curves: Vec<Curve>, verdicts: Vec<Verdict>) -> ReportRecord {
        ReportRecord { kind: self.kind, key, values, curves, verdicts, provenance: self.provenance.clone() }
    }

    /// Real boundary data from the configured Fourier terms.
    fn data(&self, h: f64) -> crate::Result<BoundaryFunction> {
        let (n, length) = match self.model.tangential {
            Some(a) => (self.r.tangential, a.length()),
            None => (1, 1.0),
        };
        let terms = self.r.data.clone();
        BoundaryFunction::from_fn(n, length, h, move |x| {
            let v: f64 = terms
                .iter()
                .map(|t| {
                    let w = 2.0 * PI * t.k as f64 / length;
                    t.cos * (w * x).cos() + t.sin * (w * x).sin()
                })
                .sum();
            Complex64::new(v, 0.0)
        })
    }

    fn nt(&self) -> usize {
        if self.model.tangential.is_some() {
            self.r.tangential
        } else {
            1
        }
    }

    fn even_mode(&self, h: f64, k: i64) -> crate::Result<EigenMode> {
        let modes = solve_transverse_modes(self.model, h, self.model.energy, 8, self.r.normal)?;
        let even = modes
            .into_iter()
            .find(|v| v.odd_part_norm() <= 1e-8)
            .ok_or_else(|| Error::Precondition("no even transverse mode near E".into()))?;
        assemble_separable_mode(&even, k, self.model, self.r.tangential)
    }

    fn bvp_options(&self, h: f64) -> BvpOptions {
        BvpOptions::resolved(h, self.r.far.min(self.model.normal.hi), self.r.per_h)
    }
}

fn values(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn flatten(parts: Vec<Output>) -> Output {
    let mut out = Output::default();
    for p in parts {
        out.records.extend(p.records);
        out.extra.extend(p.extra);
    }
    out
}

pub fn run(ctx: &Ctx) -> Result<Output, CliError> {
    match ctx.kind {
        ExperimentKind::HalfplaneChain => halfplane_chain(ctx),
        ExperimentKind::DecaySandwich => decay_sandwich(ctx),
        ExperimentKind::ExteriorMass => exterior_mass_sweep(ctx),
        ExperimentKind::PhaseResidual => phase_residual_run(ctx),
        ExperimentKind::SymbolClass => symbol_class(ctx),
        ExperimentKind::MassProfile => mass_profile(ctx),
        ExperimentKind::ParametrixConsistency => parametrix_consistency(ctx),
    }
}

fn halfplane_chain(c: &Ctx) -> Result<Output, CliError> {
    if c.model.geometry != Geometry::HalfplaneCylinder {
        return Err(c.err(&Vec::new(), Error::Unsupported("halfplane-chain runs on the flat half-plane model".into())));
    }
    let pairs: Vec<(f64, f64)> = c.r.h.iter().flat_map(|&h| c.r.rho.iter().map(move |&rho| (h, rho))).collect();
    let records = pairs
        .par_iter()
        .map(|&(h, rho)| {
            let k = key(&[("h", h), ("rho", rho)]);
            let phi = c.data(h).map_err(|e| c.err(&k, e))?;
            let rep = verify_lower_chain(&phi, rho, c.r.delta, c.r.tolerance).map_err(|e| c.err(&k, e))?;
            let mut verdicts = vec![
                Verdict::at_most("exterior_fraction", rep.exterior_fraction, c.r.tolerance),
                Verdict::at_least("lower_bound", rep.ratio, rep.bound),
            ];
            for s in &rep.steps {
                verdicts.push(if s.name == "plancherel" {
                    Verdict::within(s.name, s.lhs, s.rhs, CHAIN_ROUNDOFF * s.rhs)
                } else {
                    Verdict::at_least(s.name, s.lhs, s.rhs * (1.0 - CHAIN_ROUNDOFF))
                });
            }
            Ok(c.record(
                k,
                values(&[
                    ("ratio", rep.ratio),
                    ("bound", rep.bound),
                    ("exterior_fraction", rep.exterior_fraction),
                    ("relative_margin", rep.relative_margin()),
                ]),
                vec![Curve { label: format!("h={h}"), x: vec![rho], y: vec![rep.ratio], reference: Some(vec![rep.bound]) }],
                verdicts,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Output { records, extra: Vec::new() })
}

fn decay_traces(c: &Ctx, h: f64, k: &Key) -> crate::Result<(BoundaryTrace, Vec<BoundaryTrace>)> {
    let nt = c.nt();
    let level = |rho: f64| LevelSet::separable(c.model, rho, nt);
    match c.r.source {
        SourceKind::Poisson if c.model.geometry == Geometry::HalfplaneCylinder => {
            let phi = c.data(h)?;
            let gamma = BoundaryTrace::new(level(0.0)?, phi.values().to_vec());
            let traces = c
                .r
                .rho
                .iter()
                .map(|&r| Ok(BoundaryTrace::new(level(r)?, apply_halfplane_poisson(&phi, r).into_values())))
                .collect::<crate::Result<Vec<_>>>()?;
            Ok((gamma, traces))
        }
        SourceKind::Poisson => {
            let phi = c.data(h)?;
            let bvp = poisson_bvp(c.model, &phi, h, c.bvp_options(h))?;
            log::debug!("{}: Poisson residual {:.2e}", key_string(k), bvp.residual);
            let gamma = trace_at(&bvp.field, &level(0.0)?)?;
            let traces = c.r.rho.iter().map(|&r| trace_at(&bvp.field, &level(r)?)).collect::<crate::Result<Vec<_>>>()?;
            Ok((gamma, traces))
        }
        SourceKind::Eigenmode => {
            let mode = c.even_mode(h, c.r.modes[0])?;
            let field = mode.field.as_ref().ok_or_else(|| Error::Precondition("mode has no field".into()))?;
            let gamma = trace_at(field, &level(0.0)?)?;
            let traces = c.r.rho.iter().map(|&r| trace_at(field, &level(r)?)).collect::<crate::Result<Vec<_>>>()?;
            Ok((gamma, traces))
        }
    }
}

fn decay_sandwich(c: &Ctx) -> Result<Output, CliError> {
    let records = c
        .r
        .h
        .par_iter()
        .map(|&h| {
            let k = key(&[("h", h)]);
            let (gamma, traces) = decay_traces(c, h, &k).map_err(|e| c.err(&k, e))?;
            let fit = decay_fit(&gamma, &traces, h).map_err(|e| c.err(&k, e))?;
            let (lo, hi) = sandwich_constants(&gamma, &traces, h);
            let slope = fit.scaled_slope();
            let curve = Curve {
                label: format!("h={h}"),
                x: fit.rho.clone(),
                y: fit.log_ratio.iter().map(|v| v.exp()).collect(),
                reference: Some(fit.rho.iter().map(|r| (-r / h).exp()).collect()),
            };
            Ok(c.record(
                k,
                values(&[("slope_h", slope), ("fit_residual", fit.fit.residual), ("c_lower", lo), ("c_upper", hi)]),
                vec![curve],
                vec![Verdict::within("slope_h", slope, -1.0, c.r.tolerance)],
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Output { records, extra: Vec::new() })
}

fn ratio_first(v: &[f64]) -> f64 {
    let first = v[0];
    let max = v.iter().copied().fold(0.0, f64::max);
    if first > 0.0 {
        max / first
    } else if max == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn exterior_mass_sweep(c: &Ctx) -> Result<Output, CliError> {
    let records = c
        .r
        .h
        .par_iter()
        .map(|&h| {
            let k = key(&[("h", h)]);
            let per_mode = c
                .r
                .modes
                .par_iter()
                .map(|&m| {
                    let mk = key(&[("h", h), ("k", m as f64)]);
                    let mode = c.even_mode(h, m).map_err(|e| c.err(&mk, e))?;
                    let field = mode.field.as_ref().expect("assembled mode carries its field");
                    let level = LevelSet::separable(c.model, 0.0, c.r.tangential).map_err(|e| c.err(&mk, e))?;
                    let tr = trace_at(field, &level).map_err(|e| c.err(&mk, e))?;
                    c.r.lambda
                        .iter()
                        .map(|&l| exterior_mass(&tr, c.model, l, h, None).map(|e| e.scaled()))
                        .collect::<crate::Result<Vec<f64>>>()
                        .map_err(|e| c.err(&mk, e))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let sup: Vec<f64> =
                (0..c.r.lambda.len()).map(|i| per_mode.iter().map(|v| v[i]).fold(0.0, f64::max)).collect();
            let variation = ratio_first(&sup);
            let iso = isotonic_nondecreasing(&sup);
            let growth = if iso[0] > 0.0 {
                iso[iso.len() - 1] / iso[0]
            } else if iso[iso.len() - 1] == 0.0 {
                1.0
            } else {
                f64::INFINITY
            };
            let mut curves =
                vec![Curve { label: "sup over modes".into(), x: c.r.lambda.clone(), y: sup.clone(), reference: None }];
            for (m, v) in c.r.modes.iter().zip(&per_mode) {
                curves.push(Curve { label: format!("k={m}"), x: c.r.lambda.clone(), y: v.clone(), reference: None });
            }
            Ok(c.record(
                k,
                values(&[("max_scaled_mass", sup.iter().copied().fold(0.0, f64::max)), ("variation", variation), ("isotonic_growth", growth)]),
                curves,
                vec![Verdict::at_most("variation", variation, c.r.tolerance), Verdict::at_most("isotonic_growth", growth, TREND_FACTOR)],
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Output { records, extra: Vec::new() })
}

fn phase_residual_run(c: &Ctx) -> Result<Output, CliError> {
    let k = key(&[("order", c.r.order as f64)]);
    let kind = match c.r.phase {
        PhaseChoice::Agmon => PhaseKind::Agmon,
        PhaseChoice::Ambient => PhaseKind::Ambient,
    };
    let xi: Vec<f64> = (-20..=20).map(|i| 0.1 * i as f64).collect();
    let xprime = if c.model.is_separable() { 1 } else { c.r.tangential.max(16) };
    let series = solve_phase_series(c.model, kind, c.r.order, &xi, xprime).map_err(|e| c.err(&k, e))?;
    let rep = phase_residual(&series, &c.r.rho).map_err(|e| c.err(&k, e))?;
    let max = rep.max_residual.iter().copied().fold(0.0, f64::max);
    let order = rep.fitted_order().unwrap_or(f64::NAN);
    let verdict = if c.model.geometry == Geometry::HalfplaneCylinder {
        Verdict::at_most("max_residual", max, c.r.tolerance)
    } else {
        Verdict::at_least("fitted_order", order, c.r.order as f64 + c.r.tolerance)
    };
    let curve = Curve { label: format!("K={}", c.r.order), x: rep.xn.clone(), y: rep.max_residual.clone(), reference: None };
    let record = c.record(
        k,
        values(&[("max_residual", max), ("fitted_order", order), ("divisor_min", series.divisor_min), ("floor", rep.floor)]),
        vec![curve],
        vec![verdict],
    );
    Ok(Output { records: vec![record], extra: Vec::new() })
}

fn symbol_class(c: &Ctx) -> Result<Output, CliError> {
    let length = c.model.tangential.map(|a| a.length()).unwrap_or(2.0 * PI);
    let parts = c
        .r
        .rho
        .par_iter()
        .map(|&rho| {
            let k = key(&[("rho", rho), ("M", c.r.m)]);
            let series = solve_phase_series(c.model, PhaseKind::Agmon, c.r.order, &[0.0], 1).map_err(|e| c.err(&k, e))?;
            let b = build_cutoff_b(c.r.m).map_err(|e| c.err(&k, e))?;
            let bx = ClassBox { length, x_nodes: 1, xi_max: 3.0, xi_nodes: c.r.tangential };
            let (sr, br) = (&series, &b);
            let report = symbol_class_check(&c.r.h, b.zeta, 0.5, bx, |h| {
                Ok(move |_: f64, xi: f64| br.value(sr.eval_at(xi, rho).map(|v| v.0).unwrap_or(f64::NAN) / h))
            })
            .map_err(|e| c.err(&k, e))?;
            let mut verdicts = Vec::new();
            let mut vals = BTreeMap::new();
            let mut curves = Vec::new();
            for beta in 0..=2 {
                if let Some(e) = report.entry(0, beta) {
                    vals.insert(format!("exponent_beta{beta}"), e.exponent());
                    curves.push(Curve { label: format!("β={beta}"), x: c.r.h.clone(), y: e.sups.clone(), reference: None });
                    if beta > 0 {
                        verdicts.push(Verdict::within(&format!("exponent_beta{beta}"), e.exponent(), -(beta as f64) / 2.0, c.r.tolerance));
                    }
                }
            }
            vals.insert("zeta".into(), b.zeta);
            Ok(c.record(k, vals, curves, verdicts))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Output { records: parts, extra: Vec::new() })
}

fn profile_csv(p: &MassProfile) -> crate::Result<Vec<u8>> {
    let mut buf = Vec::new();
    p.write_csv(&mut buf)?;
    Ok(buf)
}

fn mass_profile(c: &Ctx) -> Result<Output, CliError> {
    let pairs: Vec<(f64, i64)> = c.r.h.iter().flat_map(|&h| c.r.modes.iter().map(move |&m| (h, m))).collect();
    let parts = pairs
        .par_iter()
        .map(|&(h, m)| {
            let mk = key(&[("h", h), ("k", m as f64)]);
            let mode = c.even_mode(h, m).map_err(|e| c.err(&mk, e))?;
            let mut out = Output::default();
            for &lambda in &c.r.lambda {
                let k = key(&[("h", h), ("k", m as f64), ("lambda", lambda)]);
                let p = mass_profile_comparison(&mode, c.model, lambda, h).map_err(|e| c.err(&k, e))?;
                let tol = 1e-12 * (1.0 + p.l[0].abs());
                let threshold = p.c / lambda * h * h * p.norm_sq;
                let gap = p.l.iter().zip(&p.z).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
                let verdicts = vec![
                    Verdict::at_most("threshold", p.l[0], threshold + tol),
                    Verdict::at_most("integral", p.verdict.integral, p.verdict.integral_bound),
                    Verdict::at_least("comparison", gap, -tol),
                    Verdict::at_most("ode_agreement", p.verdict.ode_agreement, c.r.tolerance),
                ];
                let vals = values(&[
                    ("L0", p.l[0]),
                    ("L_dot0", p.l_dot0),
                    ("T", p.t),
                    ("C", p.c),
                    ("C_family", p.c_family),
                    ("C_slope", p.c_slope),
                    ("integral", p.verdict.integral),
                    ("integral_bound", p.verdict.integral_bound),
                    ("norm_sq", p.norm_sq),
                    ("energy_defect", p.energy_defect),
                    ("neumann_ratio", p.neumann_ratio),
                ]);
                let curve = Curve { label: format!("λ={lambda}"), x: p.r.clone(), y: p.l.clone(), reference: Some(p.z.clone()) };
                let file = format!("{}_profile_h{h}_k{m}_lambda{lambda}.csv", c.r.name);
                out.extra.push((file, profile_csv(&p).map_err(|e| c.err(&k, e))?));
                out.records.push(c.record(k, vals, vec![curve], verdicts));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(flatten(parts))
}

fn parametrix_consistency(c: &Ctx) -> Result<Output, CliError> {
    let xi: Vec<f64> = (-40..=40).map(|i| 0.1 * i as f64).collect();
    let k0 = key(&[]);
    let series = solve_phase_series(c.model, PhaseKind::Agmon, c.r.order, &xi, 1).map_err(|e| c.err(&k0, e))?;
    let mut records = Vec::new();
    for &rho in &c.r.rho {
        let errs = c
            .r
            .h
            .par_iter()
            .map(|&h| {
                let k = key(&[("rho", rho), ("h", h)]);
                let run = || -> crate::Result<f64> {
                    let phi = c.data(h)?;
                    let par = apply_poisson_parametrix(&series, &phi, rho, Amplitude::Transport)?;
                    let bvp = poisson_bvp(c.model, &phi, h, c.bvp_options(h))?;
                    let tr = trace_at(&bvp.field, &par.level)?;
                    let gauge = (rho / h).exp();
                    let diff: f64 =
                        tr.values.iter().zip(&par.values).map(|(a, b)| (a * gauge - b).norm_sqr()).sum::<f64>().sqrt();
                    let base: f64 = tr.values.iter().map(|a| (a * gauge).norm_sqr()).sum::<f64>().sqrt();
                    Ok(diff / base)
                };
                run().map_err(|e| c.err(&k, e))
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        let order = loglog_fit(&c.r.h, &errs).slope;
        records.push(c.record(
            key(&[("rho", rho)]),
            values(&[
                ("fitted_order", order),
                ("max_error", errs.iter().copied().fold(0.0, f64::max)),
                ("min_error", errs.iter().copied().fold(f64::INFINITY, f64::min)),
            ]),
            vec![Curve { label: format!("ρ={rho}"), x: c.r.h.clone(), y: errs, reference: None }],
            vec![Verdict::at_least("fitted_order", order, c.r.tolerance)],
        ));
    }
    Ok(Output { records, extra: Vec::new() })
}
