//! Experiment runner: loads a JSON configuration, sweeps h/ρ/λ/M across the
//! library, and writes CSV, JSON and SVG reports.
//!
//! Output files for an experiment named `NAME` in directory `OUT`:
//!
//! * `OUT/NAME.csv`: one row per record (key columns, measured values, verdicts).
//! * `OUT/NAME_curves.csv`: long-format curves `(key…, curve, x, y, reference)`.
//! * `OUT/NAME.json`: the resolved config and every record with its verdicts.
//! * `OUT/NAME.svg`: the plot of all curves.
//! * mass-profile only: `OUT/NAME_profile_h{h}_k{k}_lambda{λ}.csv` with `(r, L, Z)`.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind, FieldError, Resolved, SCHEMA_VERSION};
pub use plot::emit_plots;
pub use report::{Curve, Provenance, ReportRecord, Verdict};

use crate::models::make_model;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<FieldError>),
    #[error("experiment `{experiment}` at {key}: {source}")]
    Module {
        experiment: String,
        key: String,
        #[source]
        source: crate::Error,
    },
    #[error("io error on {}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
    #[error("plot error: {0}")]
    Plot(String),
}

/// Command-line overrides applied on top of each experiment config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads for sweep points; `None` uses the rayon default.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub kind: ExperimentKind,
    pub records: Vec<ReportRecord>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn verdict_count(&self) -> usize {
        self.records.iter().map(|r| r.verdicts.len()).sum()
    }

    pub fn failed(&self) -> Vec<(&ReportRecord, &Verdict)> {
        self.records.iter().flat_map(|r| r.verdicts.iter().filter(|v| !v.passed).map(move |v| (r, v))).collect()
    }

    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.passed())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Resolves `config`, runs the sweep and writes every output file.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, CliError> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = Some(seed);
    }
    let resolved = config.resolve()?;
    let model = make_model(&config.model, &config.params).map_err(|e| {
        CliError::Config(vec![FieldError { field: "model".into(), message: e.to_string() }])
    })?;
    let out_dir = opts.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir).map_err(|e| {
        CliError::Config(vec![FieldError { field: "output".into(), message: format!("{}: {e}", out_dir.display()) }])
    })?;

    let grid = BTreeMap::from([
        ("tangential".to_string(), resolved.tangential as f64),
        ("normal".to_string(), resolved.normal as f64),
        ("per_h".to_string(), resolved.per_h),
        ("far".to_string(), resolved.far),
    ]);
    let ctx = experiments::Ctx {
        kind: config.kind,
        model: &model,
        r: &resolved,
        provenance: Provenance {
            model: model.name.clone(),
            params: model.params.clone(),
            grid,
            seed: resolved.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
        },
    };
    log::info!("running `{}` ({}) on {}", resolved.name, config.kind, model.name);
    let output = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Io { path: out_dir.clone(), message: format!("thread pool: {e}") })?
            .install(|| experiments::run(&ctx))?,
        None => experiments::run(&ctx)?,
    };
    let records = output.records;

    let name = &resolved.name;
    let mut files = Vec::new();
    let mut emit = |file: String, bytes: &[u8]| -> Result<(), CliError> {
        let path = out_dir.join(file);
        write_file(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    let mut buf = Vec::new();
    report::write_records_csv(&records, &mut buf).map_err(io_err(&out_dir))?;
    emit(format!("{name}.csv"), &buf)?;
    let mut buf = Vec::new();
    report::write_curves_csv(&records, &mut buf).map_err(io_err(&out_dir))?;
    emit(format!("{name}_curves.csv"), &buf)?;
    for (file, bytes) in &output.extra {
        emit(file.clone(), bytes)?;
    }
    let verdicts: usize = records.iter().map(|r| r.verdicts.len()).sum();
    let failed: usize = records.iter().map(|r| r.verdicts.iter().filter(|v| !v.passed).count()).sum();
    let summary = report::Summary {
        schema_version: SCHEMA_VERSION,
        name,
        kind: config.kind,
        config: &resolved,
        passed: failed == 0,
        verdicts,
        failed,
        records: &records,
    };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Io { path: out_dir.clone(), message: e.to_string() })?;
    emit(format!("{name}.json"), &json)?;
    if !records.is_empty() {
        let svg = emit_plots(&records, config.kind)?;
        emit(format!("{name}.svg"), svg.as_bytes())?;
    }
    for r in &records {
        for v in r.verdicts.iter().filter(|v| !v.passed) {
            log::warn!("{name} {}: verdict `{}` failed (measured {}, margin {})", r.key_string(), v.name, v.measured, v.margin);
        }
    }
    Ok(ExperimentReport { name: name.clone(), kind: config.kind, records, files })
}

/// Runs every experiment of a config file, optionally restricted to one kind.
pub fn run_file(path: &Path, only: Option<ExperimentKind>, opts: &RunOptions) -> Result<Vec<ExperimentReport>, CliError> {
    let configs = load_config(path)?;
    let selected: Vec<&ExperimentConfig> = configs.iter().filter(|c| only.map_or(true, |k| c.kind == k)).collect();
    if selected.is_empty() {
        return Err(CliError::Config(vec![FieldError {
            field: "kind".into(),
            message: format!("no experiment of kind {} in {}", only.map(|k| k.to_string()).unwrap_or_default(), path.display()),
        }]));
    }
    selected.into_iter().map(|c| run_experiment(c, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        parse_config(text).unwrap().remove(0)
    }

    #[test]
    fn flat_decay_sandwich_has_unit_rate() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": [0.1, 0.05, 0.025]}"#);
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), ..Default::default() };
        let rep = run_experiment(&c, &opts).unwrap();
        assert_eq!(rep.records.len(), 3);
        assert!(rep.passed());
        for r in &rep.records {
            assert!((r.values["slope_h"] + 1.0).abs() <= 1e-6);
            assert_eq!(r.verdicts[0].tolerance, 1e-6);
        }
        for f in ["decay-sandwich.csv", "decay-sandwich_curves.csv", "decay-sandwich.json", "decay-sandwich.svg"] {
            assert!(dir.path().join(f).is_file(), "{f} missing");
        }
    }

    #[test]
    fn module_errors_carry_the_key_tuple() {
        let dir = tempfile::tempdir().unwrap();
        // Boundary data with all mass outside |ξ'| ≤ δ violates the chain's hypothesis.
        let c = cfg(r#"{"kind": "halfplane-chain", "model": "halfplane-unit", "h_sweep": [0.1],
                        "rho_grid": [0.05], "data": [{"k": 100, "cos": 1.0}]}"#);
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), ..Default::default() };
        match run_experiment(&c, &opts) {
            Err(CliError::Module { key, .. }) => assert_eq!(key, "(h=0.1, rho=0.05)"),
            other => panic!("expected a module error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_model_for_the_chain_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(r#"{"kind": "halfplane-chain", "model": "separable-torus", "h_sweep": [0.1]}"#);
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), ..Default::default() };
        assert!(matches!(
            run_experiment(&c, &opts),
            Err(CliError::Module { source: crate::Error::Unsupported(_), .. })
        ));
    }

    #[test]
    fn seed_override_lands_in_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(r#"{"kind": "phase-residual", "model": "halfplane-unit", "h_sweep": [0.1], "seed": 3}"#);
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), seed: Some(11), jobs: Some(1) };
        let rep = run_experiment(&c, &opts).unwrap();
        assert_eq!(rep.records[0].provenance.seed, 11);
        assert!(rep.passed());
    }

    #[test]
    fn only_filter_without_matches_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"kind": "phase-residual", "model": "halfplane-unit", "h_sweep": [0.1]}"#).unwrap();
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), ..Default::default() };
        assert!(matches!(run_file(&path, Some(ExperimentKind::SymbolClass), &opts), Err(CliError::Config(_))));
        assert_eq!(run_file(&path, Some(ExperimentKind::PhaseResidual), &opts).unwrap().len(), 1);
    }
}
