//! Experiment registry. Each experiment owns a parameter struct that rejects
//! unknown keys, a validation pass and a run that writes into the output directory.

mod arrival;
mod dirac;
mod dkp;
mod equivariance;
mod imaging;
mod measurement;
mod modes;
mod pair_decay;
mod shell;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};
use crate::output::{Manifest, Output};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::time::Instant;

pub const REGISTRY: [(&str, &str); 9] = [
    (
        "pair-decay",
        "two-particle decay trajectories checked against the closed form",
    ),
    ("imaging", "decay partner imaged through a thin lens"),
    (
        "equivariance",
        "KS test of transported equilibrium ensembles",
    ),
    (
        "arrival-time",
        "flux-weighted mean arrival time for several g factors",
    ),
    (
        "measurement",
        "pointer branching statistics against Born weights",
    ),
    (
        "dirac-demo",
        "Dirac current trajectories of a plane-wave superposition",
    ),
    (
        "dkp-energyflow",
        "DKP energy-flow lines and the charge-density sign demo",
    ),
    (
        "energy-shell",
        "energy-shell density profile and its a+/a- constants",
    ),
    ("field-modes", "harmonic field-mode beables"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub field: String,
    pub category: String,
    pub message: String,
}

/// Collected problems and derived quantities of a configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub issues: Vec<Issue>,
    pub derived: BTreeMap<String, Value>,
}

impl Validation {
    pub fn push(&mut self, field: &str, category: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            field: field.into(),
            category: category.into(),
            message: message.into(),
        });
    }

    pub fn error(&mut self, field: &str, e: CliError) {
        let cat = e.category().to_string();
        let msg = match e {
            CliError::Field { inner, .. } => inner.to_string(),
            other => other.to_string(),
        };
        self.push(field, &cat, msg);
    }

    pub fn positive(&mut self, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(field, "config", format!("must be positive, got {v}"));
        }
    }

    pub fn non_negative(&mut self, field: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.push(field, "config", format!("must be non-negative, got {v}"));
        }
    }

    pub fn at_least(&mut self, field: &str, v: usize, min: usize) {
        if v < min {
            self.push(field, "config", format!("must be at least {min}, got {v}"));
        }
    }

    pub fn derive(&mut self, name: &str, v: impl Serialize) {
        self.derived.insert(
            name.into(),
            serde_json::to_value(v).expect("derived values serialize"),
        );
    }

    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    /// First issue as an error, if any.
    pub fn into_result(self) -> CliResult<()> {
        match self.issues.into_iter().next() {
            None => Ok(()),
            Some(i) => {
                let inner = match i.category.as_str() {
                    "physics" => CliError::Core(pilotwave_core::Error::Physics(i.message)),
                    "numerical" => CliError::Core(pilotwave_core::Error::Node(f64::NAN)),
                    _ => CliError::Config(i.message),
                };
                Err(inner.in_field(i.field))
            }
        }
    }
}

pub struct RunContext {
    pub seed: u64,
    pub out: Output,
}

pub trait Experiment: DeserializeOwned + Serialize {
    fn check(&self, v: &mut Validation);
    /// Runs the experiment and returns the manifest summary.
    fn run(&self, ctx: &mut RunContext) -> CliResult<Value>;
}

fn parse<E: Experiment>(cfg: &ExperimentConfig) -> CliResult<E> {
    toml::Value::Table(cfg.parameters.clone())
        .try_into()
        .map_err(|e: toml::de::Error| {
            CliError::Config(e.message().to_string()).in_field("parameters")
        })
}

fn validate_as<E: Experiment>(cfg: &ExperimentConfig) -> Validation {
    let mut v = Validation::default();
    match parse::<E>(cfg) {
        Ok(e) => e.check(&mut v),
        Err(e) => v.error("parameters", e),
    }
    v
}

fn run_as<E: Experiment>(cfg: &ExperimentConfig, ctx: &mut RunContext) -> CliResult<Value> {
    let e = parse::<E>(cfg)?;
    let mut v = Validation::default();
    e.check(&mut v);
    v.into_result()?;
    e.run(ctx)
}

macro_rules! dispatch {
    ($name:expr, $f:ident, $($args:expr),*) => {
        match $name {
            "pair-decay" => $f::<pair_decay::Params>($($args),*),
            "imaging" => $f::<imaging::Params>($($args),*),
            "equivariance" => $f::<equivariance::Params>($($args),*),
            "arrival-time" => $f::<arrival::Params>($($args),*),
            "measurement" => $f::<measurement::Params>($($args),*),
            "dirac-demo" => $f::<dirac::Params>($($args),*),
            "dkp-energyflow" => $f::<dkp::Params>($($args),*),
            "energy-shell" => $f::<shell::Params>($($args),*),
            "field-modes" => $f::<modes::Params>($($args),*),
            other => unreachable!("unregistered experiment {other}"),
        }
    };
}

fn known(name: &str) -> CliResult<()> {
    if REGISTRY.iter().any(|(n, _)| *n == name) {
        Ok(())
    } else {
        let names: Vec<&str> = REGISTRY.iter().map(|(n, _)| *n).collect();
        Err(CliError::Config(format!(
            "unknown experiment {name:?}; expected one of {}",
            names.join(", ")
        ))
        .in_field("experiment"))
    }
}

/// Full validation without running anything.
pub fn validate(cfg: &ExperimentConfig) -> Validation {
    if let Err(e) = known(&cfg.experiment) {
        let mut v = Validation::default();
        v.error("experiment", e);
        return v;
    }
    let mut v = dispatch!(cfg.experiment.as_str(), validate_as, cfg);
    if cfg.schema_version != SCHEMA_VERSION {
        v.push(
            "schema_version",
            "config",
            format!("unsupported schema_version {}", cfg.schema_version),
        );
    }
    v
}

/// Run the configured experiment and write `manifest.json` next to its outputs.
pub fn run(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    known(&cfg.experiment)?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(
            CliError::Config(format!("unsupported schema_version {}", cfg.schema_version))
                .in_field("schema_version"),
        );
    }
    let clock = Instant::now();
    let mut ctx = RunContext {
        seed: cfg.seed,
        out: Output::create(&cfg.output_dir)?,
    };
    let summary = dispatch!(cfg.experiment.as_str(), run_as, cfg, &mut ctx)?;
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.clone(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("configs serialize"),
        versions: BTreeMap::from([
            (
                "pilotwave-cli".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
            (
                "pilotwave-core".to_string(),
                pilotwave_core::VERSION.to_string(),
            ),
        ]),
        rng: pilotwave_core::stats::RNG_NAME.to_string(),
        threads: rayon::current_num_threads(),
        wall_time_s: clock.elapsed().as_secs_f64(),
        timestamp: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
        files: ctx.out.files().to_vec(),
        summary,
    };
    manifest.files.push(crate::output::FileEntry {
        path: "manifest.json".into(),
        kind: "manifest".into(),
    });
    let value = serde_json::to_value(&manifest).expect("manifests serialize");
    let mut out = ctx.out;
    out.write_json("manifest.json", "manifest", &value)?;
    Ok(manifest)
}

/// JSON report printed by `validate`.
pub fn validation_report(cfg: &ExperimentConfig, v: &Validation) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "valid": v.is_ok(),
        "issues": v.issues,
        "derived": v.derived,
    })
}
