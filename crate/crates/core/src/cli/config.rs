//! JSON experiment configuration and field-by-field validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CliError;

/// Bumped whenever a CSV column set or JSON field changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    HalfplaneChain,
    DecaySandwich,
    ExteriorMass,
    PhaseResidual,
    SymbolClass,
    MassProfile,
    ParametrixConsistency,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::HalfplaneChain,
        ExperimentKind::DecaySandwich,
        ExperimentKind::ExteriorMass,
        ExperimentKind::PhaseResidual,
        ExperimentKind::SymbolClass,
        ExperimentKind::MassProfile,
        ExperimentKind::ParametrixConsistency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::HalfplaneChain => "halfplane-chain",
            ExperimentKind::DecaySandwich => "decay-sandwich",
            ExperimentKind::ExteriorMass => "exterior-mass",
            ExperimentKind::PhaseResidual => "phase-residual",
            ExperimentKind::SymbolClass => "symbol-class",
            ExperimentKind::MassProfile => "mass-profile",
            ExperimentKind::ParametrixConsistency => "parametrix-consistency",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

/// How the decay-sandwich experiment realizes its solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Poisson extension of the boundary data.
    #[default]
    Poisson,
    /// Even separable eigenmode with tangential frequency `modes[0]`.
    Eigenmode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseChoice {
    #[default]
    Agmon,
    Ambient,
}

/// One term `cos·cos(2πkx/L) + sin·sin(2πkx/L)` of real boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTerm {
    pub k: i64,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Tangential nodes (power of two), or ξ' nodes for symbol-class.
    pub tangential: Option<usize>,
    /// Normal nodes of the eigenmode solver.
    pub normal: Option<usize>,
    /// Normal cells per unit h in the Poisson solve.
    pub per_h: Option<f64>,
    /// Position of the far Dirichlet closure.
    pub far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// File stem of the outputs; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub h_sweep: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sweep: Option<Vec<f64>>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<ModeTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// A single offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field `{}`: {}", self.field, self.message)
    }
}

/// Every knob after defaults are filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub name: String,
    pub h: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda: Vec<f64>,
    pub m: f64,
    pub delta: f64,
    pub tangential: usize,
    pub normal: usize,
    pub per_h: f64,
    pub far: f64,
    pub modes: Vec<i64>,
    pub data: Vec<ModeTerm>,
    pub order: usize,
    pub tolerance: f64,
    pub source: SourceKind,
    pub phase: PhaseChoice,
    pub seed: u64,
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

fn default_rho(kind: ExperimentKind) -> Vec<f64> {
    match kind {
        ExperimentKind::HalfplaneChain => vec![0.05, 0.1, 0.2],
        ExperimentKind::DecaySandwich => vec![0.05, 0.1, 0.15, 0.2, 0.25],
        ExperimentKind::PhaseResidual => geometric(1e-3, 1e-1, 16),
        ExperimentKind::SymbolClass => vec![0.5],
        ExperimentKind::ParametrixConsistency => vec![0.1],
        ExperimentKind::ExteriorMass | ExperimentKind::MassProfile => vec![0.0],
    }
}

fn default_data(kind: ExperimentKind) -> Vec<ModeTerm> {
    let t = |k, cos, sin| ModeTerm { k, cos, sin };
    match kind {
        ExperimentKind::HalfplaneChain => vec![t(0, 1.0, 0.0), t(1, 0.5, 0.0), t(40, 0.1, 0.0)],
        ExperimentKind::ParametrixConsistency => vec![t(0, 1.0, 0.0), t(1, 0.5, 0.0), t(2, 0.0, 0.25)],
        _ => vec![t(0, 1.0, 0.0)],
    }
}

fn default_tolerance(kind: ExperimentKind, model: &str) -> f64 {
    match kind {
        ExperimentKind::HalfplaneChain => 0.1,
        ExperimentKind::DecaySandwich if model == "halfplane-unit" => 1e-6,
        ExperimentKind::DecaySandwich => 0.1,
        ExperimentKind::ExteriorMass => 4.0,
        ExperimentKind::PhaseResidual if model == "halfplane-unit" => 1e-12,
        ExperimentKind::PhaseResidual => 0.5,
        ExperimentKind::SymbolClass => 0.1,
        ExperimentKind::MassProfile => 1e-8,
        ExperimentKind::ParametrixConsistency => 0.7,
    }
}

impl ExperimentConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    /// Validates every field and fills in per-kind defaults. All problems are
    /// collected before returning.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let kind = self.kind;
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| errs.push(FieldError { field: field.into(), message });

        let name = self.name();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            bad("name", format!("`{name}` must be nonempty and use only [A-Za-z0-9_-]"));
        }
        if !crate::models::known_models().contains(&self.model.as_str()) {
            bad("model", format!("unknown model `{}`", self.model));
        }
        check_sweep("h_sweep", &self.h_sweep, true, &mut bad);
        let min_h = match kind {
            ExperimentKind::SymbolClass | ExperimentKind::ParametrixConsistency => 2,
            _ => 1,
        };
        if !self.h_sweep.is_empty() && self.h_sweep.len() < min_h {
            bad("h_sweep", format!("{kind} fits an h-exponent and needs at least {min_h} values"));
        }
        let rho = self.rho_grid.clone().unwrap_or_else(|| default_rho(kind));
        check_sweep("rho_grid", &rho, false, &mut bad);
        if rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
            bad("rho_grid", "values must be finite and nonnegative".into());
        }
        if kind == ExperimentKind::PhaseResidual && rho.iter().any(|r| *r <= 0.0) {
            bad("rho_grid", "phase-residual samples x_n and needs positive values".into());
        }
        if kind == ExperimentKind::DecaySandwich && rho.len() < 4 {
            bad("rho_grid", format!("decay-sandwich fits a rate and needs at least 4 values, got {}", rho.len()));
        }
        let lambda = self.lambda_sweep.clone().unwrap_or_else(|| vec![4.0, 8.0, 16.0, 32.0]);
        check_sweep("lambda_sweep", &lambda, true, &mut bad);
        let m = self.m.unwrap_or(8.0);
        if !(m.is_finite() && m > 0.0) {
            bad("M", format!("{m} must be positive"));
        }
        let delta = self.delta.unwrap_or(0.5);
        if !(delta.is_finite() && delta > 0.0) {
            bad("delta", format!("{delta} must be positive"));
        }
        let (dt, dn) = match kind {
            ExperimentKind::HalfplaneChain => (1024, 512),
            ExperimentKind::DecaySandwich | ExperimentKind::ParametrixConsistency => (64, 512),
            ExperimentKind::SymbolClass => (6000, 512),
            ExperimentKind::ExteriorMass | ExperimentKind::MassProfile => (512, 512),
            ExperimentKind::PhaseResidual => (1, 512),
        };
        let tangential = self.grid.tangential.unwrap_or(dt);
        let normal = self.grid.normal.unwrap_or(dn);
        let needs_pow2 = !matches!(kind, ExperimentKind::SymbolClass | ExperimentKind::PhaseResidual);
        if tangential == 0 || (needs_pow2 && !tangential.is_power_of_two()) {
            bad("grid.tangential", format!("{tangential} must be a positive power of two"));
        }
        if normal < 16 {
            bad("grid.normal", format!("{normal} is below the minimum of 16"));
        }
        let per_h = self.grid.per_h.unwrap_or(match kind {
            ExperimentKind::ParametrixConsistency => 400.0,
            _ => 100.0,
        });
        if !(per_h.is_finite() && per_h >= 4.0) {
            bad("grid.per_h", format!("{per_h} must be at least 4"));
        }
        let far = self.grid.far.unwrap_or(1.0);
        if !(far.is_finite() && far > 0.0) {
            bad("grid.far", format!("{far} must be positive"));
        }
        let modes = self.modes.clone().unwrap_or_else(|| match kind {
            ExperimentKind::ExteriorMass => vec![0, 8, 16, 24, 32],
            _ => vec![0],
        });
        if modes.is_empty() {
            bad("modes", "must be nonempty".into());
        }
        let data = self.data.clone().unwrap_or_else(|| default_data(kind));
        if data.is_empty() {
            bad("data", "must be nonempty".into());
        }
        if data.iter().any(|t| !t.cos.is_finite() || !t.sin.is_finite()) {
            bad("data", "coefficients must be finite".into());
        }
        if data.iter().all(|t| t.cos == 0.0 && (t.sin == 0.0 || t.k == 0)) {
            bad("data", "boundary data vanish identically".into());
        }
        let order = self.order.unwrap_or(match kind {
            ExperimentKind::PhaseResidual => 4,
            _ => 6,
        });
        if !(2..=12).contains(&order) {
            bad("order", format!("{order} must lie in 2..=12"));
        }
        let tolerance = self.tolerance.unwrap_or_else(|| default_tolerance(kind, &self.model));
        if !(tolerance.is_finite() && tolerance > 0.0) {
            bad("tolerance", format!("{tolerance} must be positive"));
        }
        if let Some(out) = &self.output {
            if out.as_os_str().is_empty() {
                bad("output", "must not be empty".into());
            }
        }
        if !errs.is_empty() {
            return Err(CliError::Config(errs));
        }
        Ok(Resolved {
            name,
            h: self.h_sweep.clone(),
            rho,
            lambda,
            m,
            delta,
            tangential,
            normal,
            per_h,
            far,
            modes,
            data,
            order,
            tolerance,
            source: self.source.unwrap_or_default(),
            phase: self.phase.unwrap_or_default(),
            seed: self.seed.unwrap_or(0),
        })
    }
}

fn check_sweep(field: &str, v: &[f64], positive: bool, bad: &mut impl FnMut(&str, String)) {
    if v.is_empty() {
        bad(field, "sweep must be nonempty".into());
        return;
    }
    if positive && v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        bad(field, "values must be finite and positive".into());
    }
    let distinct: BTreeSet<u64> = v.iter().map(|x| x.to_bits()).collect();
    if distinct.len() != v.len() {
        bad(field, "values must be distinct".into());
    }
}

/// Parses either a single experiment object or `{"experiments": [...]}`.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>, CliError> {
    let json_err = |e: serde_json::Error| {
        CliError::Config(vec![FieldError { field: "<document>".into(), message: e.to_string() }])
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    let list = match value.get("experiments") {
        Some(list) => {
            let arr = list.as_array().ok_or_else(|| {
                CliError::Config(vec![FieldError { field: "experiments".into(), message: "must be an array".into() }])
            })?;
            let mut out = Vec::with_capacity(arr.len());
            for (i, item) in arr.iter().enumerate() {
                let cfg = ExperimentConfig::deserialize(item).map_err(|e| {
                    CliError::Config(vec![FieldError { field: format!("experiments[{i}]"), message: e.to_string() }])
                })?;
                out.push(cfg);
            }
            out
        }
        None => vec![ExperimentConfig::deserialize(&value).map_err(json_err)?],
    };
    if list.is_empty() {
        return Err(CliError::Config(vec![FieldError {
            field: "experiments".into(),
            message: "must be nonempty".into(),
        }]));
    }
    let mut seen = BTreeSet::new();
    for c in &list {
        if !seen.insert(c.name()) {
            return Err(CliError::Config(vec![FieldError {
                field: "name".into(),
                message: format!("duplicate experiment name `{}`", c.name()),
            }]));
        }
    }
    Ok(list)
}

pub fn load_config(path: &Path) -> Result<Vec<ExperimentConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str) -> String {
        format!(r#"{{"kind": "{kind}", "model": "separable-torus", "h_sweep": [0.1, 0.05]}}"#)
    }

    #[test]
    fn kinds_round_trip_through_strings() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
            let js = serde_json::to_string(&k).unwrap();
            assert_eq!(js, format!("\"{}\"", k.as_str()));
        }
        assert!("decay".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn empty_h_sweep_is_a_config_error() {
        let cfg = parse_config(r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": []}"#).unwrap();
        match cfg[0].resolve() {
            Err(CliError::Config(errs)) => assert!(errs.iter().any(|e| e.field == "h_sweep")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_are_reported_per_field() {
        let text = r#"{"kind": "exterior-mass", "model": "nope", "h_sweep": [0.1, 0.1],
                       "lambda_sweep": [-1], "delta": 0, "grid": {"tangential": 100}}"#;
        let Err(CliError::Config(errs)) = parse_config(text).unwrap()[0].resolve() else {
            panic!("expected config error");
        };
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        for f in ["model", "h_sweep", "lambda_sweep", "delta", "grid.tangential"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": [0.1], "hsweep": [1]}"#;
        assert!(matches!(parse_config(text), Err(CliError::Config(_))));
    }

    #[test]
    fn defaults_depend_on_kind() {
        let r = parse_config(&minimal("exterior-mass")).unwrap()[0].resolve().unwrap();
        assert_eq!(r.lambda, vec![4.0, 8.0, 16.0, 32.0]);
        assert_eq!(r.modes, vec![0, 8, 16, 24, 32]);
        assert_eq!(r.tolerance, 4.0);
        let r = parse_config(&minimal("phase-residual")).unwrap()[0].resolve().unwrap();
        assert_eq!(r.rho.len(), 16);
        assert!((r.rho[15] - 0.1).abs() < 1e-15);
        assert_eq!(r.order, 4);
    }

    #[test]
    fn experiment_lists_and_duplicate_names() {
        let two = format!(r#"{{"experiments": [{}, {}]}}"#, minimal("symbol-class"), minimal("exterior-mass"));
        assert_eq!(parse_config(&two).unwrap().len(), 2);
        let dup = format!(r#"{{"experiments": [{}, {}]}}"#, minimal("symbol-class"), minimal("symbol-class"));
        assert!(matches!(parse_config(&dup), Err(CliError::Config(_))));
    }

    #[test]
    fn exponent_fits_need_two_h_values() {
        let text = r#"{"kind": "symbol-class", "model": "separable-torus", "h_sweep": [0.1]}"#;
        assert!(parse_config(text).unwrap()[0].resolve().is_err());
    }
}
