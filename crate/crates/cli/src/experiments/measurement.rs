use super::{Experiment, RunContext, Validation};
use crate::error::CliResult;
use pilotwave_core::guide::{measurement_branching, BranchingSetup};
use pilotwave_core::stats::binomial_sigma;
use pilotwave_core::C64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// System amplitudes as [re, im] pairs.
    pub coefficients: Vec<C64>,
    pub coupling: f64,
    pub omega: f64,
    pub system_mass: f64,
    pub pointer_mass: f64,
    pub pointer_sigma: f64,
    pub readout_time: f64,
    pub x_extent: f64,
    pub y_extent: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub snapshot_every: usize,
    pub hbar: f64,
    pub n: usize,
}

impl Default for Params {
    fn default() -> Self {
        let b = BranchingSetup::default();
        Self {
            coefficients: b.coefficients,
            coupling: b.coupling,
            omega: b.omega,
            system_mass: b.system_mass,
            pointer_mass: b.pointer_mass,
            pointer_sigma: b.pointer_sigma,
            readout_time: b.readout_time,
            x_extent: b.x_extent,
            y_extent: b.y_extent,
            nx: b.nx,
            ny: b.ny,
            dt: b.dt,
            snapshot_every: b.snapshot_every,
            hbar: b.hbar,
            n: 10_000,
        }
    }
}

impl Params {
    fn setup(&self) -> BranchingSetup {
        BranchingSetup {
            coefficients: self.coefficients.clone(),
            coupling: self.coupling,
            omega: self.omega,
            system_mass: self.system_mass,
            pointer_mass: self.pointer_mass,
            pointer_sigma: self.pointer_sigma,
            readout_time: self.readout_time,
            x_extent: self.x_extent,
            y_extent: self.y_extent,
            nx: self.nx,
            ny: self.ny,
            dt: self.dt,
            snapshot_every: self.snapshot_every,
            hbar: self.hbar,
        }
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        for (name, x) in [
            ("coupling", self.coupling),
            ("omega", self.omega),
            ("system_mass", self.system_mass),
            ("pointer_mass", self.pointer_mass),
            ("pointer_sigma", self.pointer_sigma),
            ("readout_time", self.readout_time),
            ("x_extent", self.x_extent),
            ("y_extent", self.y_extent),
            ("dt", self.dt),
            ("hbar", self.hbar),
        ] {
            v.positive(name, x);
        }
        v.at_least("coefficients", self.coefficients.len(), 2);
        v.at_least("nx", self.nx, 8);
        v.at_least("ny", self.ny, 8);
        v.at_least("snapshot_every", self.snapshot_every, 1);
        v.at_least("n", self.n, 1);
        if !v.is_ok() {
            return;
        }
        let norm: f64 = self.coefficients.iter().map(|c| c.norm_sqr()).sum();
        if !(norm > 0.0) {
            v.push("coefficients", "physics", "amplitudes vanish");
            return;
        }
        let s = self.setup();
        v.derive(
            "born_weights",
            self.coefficients
                .iter()
                .map(|c| c.norm_sqr() / norm)
                .collect::<Vec<_>>(),
        );
        v.derive("pointer_centres", s.centres());
        let overlap = s.pointer_overlap();
        v.derive("pointer_overlap", overlap);
        if overlap >= 1e-6 {
            v.push(
                "coupling",
                "physics",
                format!("pointer packets overlap ({overlap:.3e}); raise coupling or readout_time"),
            );
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let r = measurement_branching(&self.setup(), self.n, ctx.seed)?;
        let z: Vec<f64> = r
            .fractions
            .iter()
            .zip(&r.born)
            .map(|(f, b)| (f - b).abs() / binomial_sigma(*b, r.n).max(f64::MIN_POSITIVE))
            .collect();
        let summary = json!({
            "n": r.n,
            "fractions": r.fractions,
            "born": r.born,
            "deviation_sigmas": z,
            "within_3_sigma": z.iter().all(|v| *v <= 3.0),
            "lost": r.lost,
        });
        ctx.out.write_json(
            "stats.json",
            "stats",
            &json!({
                "summary": summary,
                "grid_weights": r.grid_weights,
                "overlap": r.overlap,
            }),
        )?;
        Ok(summary)
    }
}
