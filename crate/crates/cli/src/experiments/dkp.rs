use super::{Experiment, RunContext, Validation};
use crate::error::{CliError, CliResult};
use crate::output::trajectory_rows;
use pilotwave_core::dkp::{
    energy_momentum_current, total_energy_momentum, DkpFlow, DkpRep, DkpState, DkpWave,
    ObserverVector,
};
use pilotwave_core::guide::{
    integrate_ensemble, sample_density, BeableConfig, Controls, SamplerOptions, Status,
};
use pilotwave_core::stats::rng_stream;
use pilotwave_core::C64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observer {
    /// "rest" or "total" (direction of the total four-momentum in the box).
    Named(String),
    Vector([f64; 4]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub rep: DkpRep,
    pub mass: f64,
    pub massless: bool,
    pub waves: Vec<DkpWave>,
    pub observer: Observer,
    pub n: usize,
    pub half_width: f64,
    pub t_final: f64,
    pub dt: f64,
    pub record_every: usize,
    /// Charge used for the charge-density sign diagnostic.
    pub charge: f64,
    pub demo_points: usize,
}

impl Default for Params {
    fn default() -> Self {
        // different energies with tuned weights: s^0 dips below zero between fringes
        Self {
            rep: DkpRep::Spin0,
            mass: 1.0,
            massless: false,
            waves: vec![
                DkpWave::Scalar {
                    coefficient: C64::new(1.0, 0.0),
                    p: [0.0, 0.0, 0.0],
                    energy: None,
                },
                DkpWave::Scalar {
                    coefficient: C64::new(0.658, 0.0),
                    p: [3.0, 0.0, 0.0],
                    energy: None,
                },
            ],
            observer: Observer::Named("rest".into()),
            n: 20,
            half_width: 5.0,
            t_final: 10.0,
            dt: 0.01,
            record_every: 10,
            charge: 1.0,
            demo_points: 4000,
        }
    }
}

impl Params {
    fn observer(&self, state: &DkpState) -> CliResult<ObserverVector> {
        let field = |e: pilotwave_core::Error| CliError::from(e).in_field("observer");
        match &self.observer {
            Observer::Named(s) if s == "rest" => Ok(ObserverVector::rest()),
            Observer::Named(s) if s == "total" => {
                let b = self.half_width;
                Ok(total_energy_momentum(state, &[(-b, b); 3], 24, 0.0)
                    .map_err(field)?
                    .1)
            }
            Observer::Named(s) => Err(CliError::Config(format!(
                "unknown observer {s:?}; expected rest, total or [n0, n1, n2, n3]"
            ))
            .in_field("observer")),
            Observer::Vector(n) => ObserverVector::new(*n).map_err(field),
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
        v.at_least("waves", self.waves.len(), 1);
        if !(self.mass > 0.0) {
            return;
        }
        let mut energies = Vec::new();
        for (i, w) in self.waves.iter().enumerate() {
            match DkpState::new(self.rep, self.mass, self.massless, std::slice::from_ref(w)) {
                Ok(s) => energies.push(s.terms[0].energy),
                Err(e) => v.error(&format!("waves[{i}]"), e.into()),
            }
        }
        v.derive("energies", energies);
        if v.is_ok() {
            match DkpState::new(self.rep, self.mass, self.massless, &self.waves)
                .map_err(CliError::from)
                .and_then(|s| self.observer(&s))
            {
                Ok(n) => v.derive("observer", n.n),
                Err(e) => v.error("observer", e),
            }
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let state = Arc::new(DkpState::new(
            self.rep,
            self.mass,
            self.massless,
            &self.waves,
        )?);
        let n = self.observer(&state)?;
        let b = self.half_width;
        let energy = |x: &[f64]| state.theta(x, 0.0)[0][0].max(0.0);
        let starts = sample_density(
            &energy,
            &[(-b, b); 3],
            self.n,
            ctx.seed,
            &SamplerOptions::default(),
        )?;
        let starts: Vec<BeableConfig> = starts
            .iter()
            .map(|x| BeableConfig::from_flat(x, &[3], 0.0))
            .collect();
        let flow = DkpFlow {
            state: state.clone(),
            n,
            floor: 1e-14,
        };
        let controls = Controls {
            dt: self.dt,
            record_every: self.record_every,
        };
        let recs = integrate_ensemble(&starts, &flow, self.t_final, &controls);
        let rows: Vec<_> = recs
            .iter()
            .enumerate()
            .flat_map(|(i, r)| trajectory_rows(i as u64, r, 0))
            .collect();
        ctx.out.write_trajectories("trajectories.csv", &rows)?;

        // sign diagnostics on random points of the box
        use rand::Rng;
        let mut rng = rng_stream(ctx.seed, u64::MAX - 1);
        let mut min_energy = f64::INFINITY;
        let mut min_charge = f64::INFINITY;
        let mut max_charge = f64::NEG_INFINITY;
        let mut negative = 0usize;
        let mut worst_causal = f64::INFINITY;
        for _ in 0..self.demo_points {
            let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-b..b));
            let t = rng.random_range(0.0..self.t_final);
            let s0 = state.charge_current(&x, t, self.charge)[0];
            min_charge = min_charge.min(s0);
            max_charge = max_charge.max(s0);
            negative += usize::from(s0 * self.charge.signum() < 0.0);
            if let Ok(f) = energy_momentum_current(&state, &n, &x, t, 0.0) {
                min_energy = min_energy.min(f.j[0]);
                let jj = f.j[0] * f.j[0] - f.j[1] * f.j[1] - f.j[2] * f.j[2] - f.j[3] * f.j[3];
                worst_causal = worst_causal.min(jj);
            }
        }
        let summary = json!({
            "observer": n.n,
            "trajectories": recs.len(),
            "node_encounters": recs.iter().filter(|r| r.status == Status::NodeEncounter).count(),
            "min_energy_density": min_energy,
            "min_minkowski_norm": worst_causal,
            "charge_density_range": [min_charge, max_charge],
            "charge_sign_flips": negative,
            "demo_points": self.demo_points,
        });
        ctx.out.write_json("stats.json", "stats", &summary)?;
        Ok(summary)
    }
}
