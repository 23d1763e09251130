use super::{Experiment, RunContext, Validation};
use crate::error::CliResult;
use crate::output::trajectory_rows;
use pilotwave_core::decay::{
    pair_source, pair_trajectories_with, sample_pair_starts, DecayPairSpec,
};
use pilotwave_core::guide::Controls;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub alpha: f64,
    pub m1: f64,
    pub m2: f64,
    pub hbar: f64,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    /// Half-width of the cube the centre of mass is drawn from.
    pub centre_box: f64,
    pub record_every: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            m1: 1.0,
            m2: 1.0,
            hbar: 1.0,
            n: 100,
            t_final: 10.0,
            dt: 0.01,
            centre_box: 5.0,
            record_every: 10,
        }
    }
}

impl Params {
    fn spec(&self) -> CliResult<DecayPairSpec> {
        Ok(DecayPairSpec::new(self.alpha, self.m1, self.m2, self.hbar)?)
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.positive("alpha", self.alpha);
        v.positive("m1", self.m1);
        v.positive("m2", self.m2);
        v.positive("hbar", self.hbar);
        v.positive("t_final", self.t_final);
        v.positive("dt", self.dt);
        v.non_negative("centre_box", self.centre_box);
        v.at_least("n", self.n, 1);
        v.at_least("record_every", self.record_every, 1);
        if v.is_ok() {
            let mu = self.m1 * self.m2 / (self.m1 + self.m2);
            v.derive("mu", mu);
            v.derive("initial_spread", (self.hbar * self.alpha).sqrt());
            v.derive("rk4_steps", (self.t_final / self.dt).ceil());
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let spec = self.spec()?;
        let src = pair_source(&spec)?;
        let starts = sample_pair_starts(&spec, self.n, self.centre_box, ctx.seed);
        let controls = Controls {
            dt: self.dt,
            record_every: self.record_every,
        };
        let runs = starts
            .par_iter()
            .map(|s| pair_trajectories_with(&spec, &src, s, self.t_final, &controls))
            .collect::<pilotwave_core::Result<Vec<_>>>()?;
        let rows: Vec<_> = runs
            .iter()
            .enumerate()
            .flat_map(|(i, r)| trajectory_rows(i as u64, &r.numeric, 0))
            .collect();
        ctx.out.write_trajectories("trajectories.csv", &rows)?;
        let per_run: Vec<Value> = runs
            .iter()
            .map(|r| {
                json!({
                    "status": r.numeric.status.as_str(),
                    "max_relative_error": r.max_relative_error,
                    "momentum_drift": r.momentum_drift,
                    "max_opposite_defect": r.max_opposite_defect,
                    "direction_drift": r.direction_drift,
                })
            })
            .collect();
        let worst = |f: fn(&pilotwave_core::decay::PairTrajectories) -> f64| {
            runs.iter().map(f).fold(0.0, f64::max)
        };
        let summary = json!({
            "pairs": runs.len(),
            "max_relative_error": worst(|r| r.max_relative_error),
            "max_centre_of_mass_drift": worst(|r| r.momentum_drift),
            "max_opposite_defect": worst(|r| r.max_opposite_defect),
            "max_direction_drift": worst(|r| r.direction_drift),
            "mu": spec.mu(),
        });
        ctx.out.write_json(
            "stats.json",
            "stats",
            &json!({ "summary": summary, "runs": per_run }),
        )?;
        Ok(summary)
    }
}
