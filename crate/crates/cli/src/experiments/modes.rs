use super::{Experiment, RunContext, Validation};
use crate::error::{CliError, CliResult};
use crate::output::TrajectoryRow;
use pilotwave_core::fieldmodes::{Dispersion, Mode, ModeFlow};
use pilotwave_core::guide::{
    ks_report, marginal_cdfs, rk4_flat, sample_density, Controls, SamplerOptions, Status,
};
use pilotwave_core::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeParams {
    pub k: f64,
    pub dispersion: Dispersion,
    /// Fock amplitudes as [re, im] pairs.
    #[serde(default)]
    pub coefficients: Option<Vec<C64>>,
    /// Coherent-state amplitude as [re, im].
    #[serde(default)]
    pub coherent: Option<C64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub hbar: f64,
    pub modes: Vec<ModeParams>,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl Default for Params {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            hbar: 1.0,
            modes: vec![
                ModeParams {
                    k: 1.3,
                    dispersion: Dispersion::Massless,
                    coefficients: Some(vec![C64::new(h, 0.0), C64::new(0.0, h)]),
                    coherent: None,
                },
                ModeParams {
                    k: 0.7,
                    dispersion: Dispersion::NonRelativistic { mass: 1.0 },
                    coefficients: None,
                    coherent: Some(C64::new(0.8, 0.3)),
                },
            ],
            n: 1000,
            t_final: 5.0,
            dt: 0.005,
            record_every: 20,
        }
    }
}

impl ModeParams {
    fn build(&self, hbar: f64) -> CliResult<Mode> {
        match (&self.coefficients, self.coherent) {
            (Some(c), None) => Ok(Mode::new(self.k, self.dispersion, hbar, c.clone(), 0.0)?),
            (None, Some(a)) => Ok(Mode::coherent(self.k, self.dispersion, hbar, a, 0.0)?),
            (None, None) => Ok(Mode::ground(self.k, self.dispersion, hbar, 0.0)?),
            (Some(_), Some(_)) => Err(CliError::Config(
                "give either coefficients or coherent, not both".into(),
            )),
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.positive("hbar", self.hbar);
        v.positive("t_final", self.t_final);
        v.positive("dt", self.dt);
        v.at_least("n", self.n, 2);
        v.at_least("record_every", self.record_every, 1);
        v.at_least("modes", self.modes.len(), 1);
        if !(self.hbar > 0.0) {
            return;
        }
        let mut energies = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            match m.build(self.hbar) {
                Ok(mode) => energies.push(mode.energy),
                Err(e) => v.error(&format!("modes[{i}]"), e),
            }
        }
        v.derive("mode_energies", energies);
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.build(self.hbar)
                    .map_err(|e| e.in_field(format!("modes[{i}]")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let controls = Controls {
            dt: self.dt,
            record_every: self.record_every,
        };
        let mut per_mode = Vec::new();
        let mut paths = Vec::new();
        let mut increments = Vec::new();
        for (j, m) in modes.iter().enumerate() {
            let ext = m.extent();
            let seed = ctx
                .seed
                .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(j as u64 + 1));
            let qs = sample_density(
                &|x| m.density(x[0], 0.0, self.hbar),
                &[(-ext, ext)],
                self.n,
                seed,
                &SamplerOptions::default(),
            )?;
            let flow = ModeFlow {
                mode: m,
                hbar: self.hbar,
                floor: 1e-300,
            };
            let runs: Vec<_> = qs
                .par_iter()
                .map(|q| rk4_flat(q, 0.0, &flow, self.t_final, &controls))
                .collect();
            let finals: Vec<Vec<f64>> = runs
                .iter()
                .filter(|r| r.2 == Status::Ok)
                .map(|r| r.0.last().expect("non-empty path").clone())
                .collect();
            let lost = runs.len() - finals.len();
            let cdfs = marginal_cdfs(
                &|x: &[f64]| m.density(x[0], self.t_final, self.hbar),
                &[(-ext, ext)],
                4001,
            );
            let ks = ks_report(&finals, lost, self.n, &cdfs, self.t_final);
            increments.push(
                runs.iter()
                    .map(|r| r.0.last().expect("non-empty path")[0] - r.0[0][0])
                    .collect::<Vec<f64>>(),
            );
            per_mode.push(json!({
                "k": m.k,
                "energy": m.energy,
                "energy_expectation_start": m.energy_expectation(0.0, self.hbar),
                "energy_expectation_end": m.energy_expectation(self.t_final, self.hbar),
                "equivariance": ks,
            }));
            paths.push(runs);
        }
        let mut rows = Vec::new();
        for i in 0..self.n {
            for (j, runs) in paths.iter().enumerate() {
                let (xs, ts, st) = &runs[i];
                let last = xs.len() - 1;
                for (k, (x, t)) in xs.iter().zip(ts).enumerate() {
                    rows.push(TrajectoryRow {
                        run_id: i as u64,
                        particle: j as u32 + 1,
                        t: *t,
                        x: x[0],
                        y: 0.0,
                        z: 0.0,
                        status: if k == last {
                            st.as_str()
                        } else {
                            Status::Ok.as_str()
                        }
                        .to_string(),
                    });
                }
            }
        }
        ctx.out.write_trajectories("trajectories.csv", &rows)?;
        let mut cross = Vec::new();
        for a in 0..increments.len() {
            for b in a + 1..increments.len() {
                cross.push(json!({ "modes": [a, b], "increment_correlation": pearson(&increments[a], &increments[b]) }));
            }
        }
        let summary = json!({
            "modes": per_mode,
            "cross_mode": cross,
            "correlation_critical_1pct": 2.576 / (self.n as f64).sqrt(),
        });
        ctx.out.write_json("stats.json", "stats", &summary)?;
        Ok(summary)
    }
}
