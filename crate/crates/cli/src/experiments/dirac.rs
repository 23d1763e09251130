use super::{Experiment, RunContext, Validation};
use crate::error::{CliError, CliResult};
use crate::output::trajectory_rows;
use pilotwave_core::guide::{
    integrate_ensemble, sample_density, BeableConfig, Controls, SamplerOptions, Status,
};
use pilotwave_core::reldirac::{
    dirac_velocity, pauli_limit_deviation, DiracGuide, DiracState, DiracTerm, EnergySign,
};
use pilotwave_core::C64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub mass: f64,
    /// Plane-wave terms: coefficient [re, im], momentum p, sign, two-spinor chi.
    pub terms: Vec<DiracTerm>,
    pub n: usize,
    /// Half-width of the cube the starting points are drawn from.
    pub half_width: f64,
    pub t_final: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            mass: 1.0,
            terms: vec![
                DiracTerm::up([0.5, 0.0, 0.0]),
                DiracTerm::new(
                    C64::new(0.0, 0.8),
                    [0.0, 0.4, 0.0],
                    EnergySign::Positive,
                    [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
                ),
            ],
            n: 20,
            half_width: 5.0,
            t_final: 10.0,
            dt: 0.01,
            record_every: 10,
        }
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.positive("mass", self.mass);
        v.positive("half_width", self.half_width);
        v.positive("t_final", self.t_final);
        v.positive("dt", self.dt);
        v.at_least("n", self.n, 1);
        v.at_least("record_every", self.record_every, 1);
        v.at_least("terms", self.terms.len(), 1);
        for (i, t) in self.terms.iter().enumerate() {
            if t.chi.iter().all(|c| c.norm() == 0.0) {
                v.push(&format!("terms[{i}].chi"), "physics", "two-spinor vanishes");
            }
            if t.p.iter().any(|p| !p.is_finite()) {
                v.push(
                    &format!("terms[{i}].p"),
                    "config",
                    "momentum must be finite",
                );
            }
        }
        if v.is_ok() {
            let e: Vec<f64> = self
                .terms
                .iter()
                .map(|t| {
                    t.sign.factor()
                        * (t.p.iter().map(|p| p * p).sum::<f64>() + self.mass * self.mass).sqrt()
                })
                .collect();
            v.derive("energies", e);
            v.derive(
                "negative_energy_terms",
                self.terms
                    .iter()
                    .filter(|t| t.sign == EnergySign::Negative)
                    .count(),
            );
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let state = Arc::new(DiracState::new(self.mass, self.terms.clone())?);
        let b = self.half_width;
        let rho = |x: &[f64]| {
            state
                .amplitude(x, 0.0)
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
        };
        let starts = sample_density(
            &rho,
            &[(-b, b); 3],
            self.n,
            ctx.seed,
            &SamplerOptions::default(),
        )?;
        let starts: Vec<BeableConfig> = starts
            .iter()
            .map(|x| BeableConfig::from_flat(x, &[3], 0.0))
            .collect();
        let guide = DiracGuide {
            state: state.clone(),
            rho_floor: 1e-14,
        };
        let controls = Controls {
            dt: self.dt,
            record_every: self.record_every,
        };
        let recs = integrate_ensemble(&starts, &guide, self.t_final, &controls);
        let rows: Vec<_> = recs
            .iter()
            .enumerate()
            .flat_map(|(i, r)| trajectory_rows(i as u64, r, 0))
            .collect();
        ctx.out.write_trajectories("trajectories.csv", &rows)?;
        let mut vmax = 0.0f64;
        for r in &recs {
            for c in &r.configs {
                if let Ok(dv) = dirac_velocity(&state, &c.positions[0], c.t, 1e-14) {
                    vmax = vmax.max(dv.v.iter().map(|a| a * a).sum::<f64>().sqrt());
                }
            }
        }
        let points: Vec<[f64; 3]> = starts.iter().map(|s| s.positions[0]).collect();
        let pauli = if self.terms.iter().all(|t| t.sign == EnergySign::Positive) {
            Some(
                pauli_limit_deviation(&state, &points, 0.0)
                    .map_err(|e| CliError::from(e).in_field("terms"))?,
            )
        } else {
            None
        };
        let summary = json!({
            "trajectories": recs.len(),
            "node_encounters": recs.iter().filter(|r| r.status == Status::NodeEncounter).count(),
            "max_speed": vmax,
            "subluminal": vmax <= 1.0 + 1e-10,
            "pauli_limit_deviation": pauli,
        });
        ctx.out.write_json("stats.json", "stats", &summary)?;
        Ok(summary)
    }
}
