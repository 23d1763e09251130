use super::{Experiment, RunContext, Validation};
use crate::error::{CliError, CliResult};
use crate::output::{trajectory_rows, TrajectoryRow};
use pilotwave_core::decay::{imaging_trajectories, DecayPairSpec, ImagingSpec, LensSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Lens distances default to f = 50, S = S' = 100 when none is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub alpha: f64,
    pub mass: f64,
    pub hbar: f64,
    pub focal: Option<f64>,
    pub object: Option<f64>,
    pub image: Option<f64>,
    pub detection: [f64; 2],
    pub source_spread: f64,
    pub aperture: f64,
    pub waist: f64,
    pub dt: f64,
    pub n: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mass: 1.0,
            hbar: 1.0,
            focal: None,
            object: None,
            image: None,
            detection: [3.0, -2.0],
            source_spread: 0.5,
            aperture: 50.0,
            waist: 1.0,
            dt: 0.05,
            n: 100,
        }
    }
}

impl Params {
    fn lens(&self) -> CliResult<LensSpec> {
        let (f, s, si) = match (self.focal, self.object, self.image) {
            (None, None, None) => (Some(50.0), Some(100.0), None),
            other => other,
        };
        LensSpec::new(f, s, si).map_err(|e| CliError::from(e).in_field("focal/object/image"))
    }

    fn spec(&self) -> CliResult<ImagingSpec> {
        let spec = ImagingSpec {
            pair: DecayPairSpec::new(self.alpha, self.mass, self.mass, self.hbar)?,
            lens: self.lens()?,
            detection: self.detection,
            source_spread: self.source_spread,
            aperture: self.aperture,
            waist: self.waist,
            dt: self.dt,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.positive("alpha", self.alpha);
        v.positive("mass", self.mass);
        v.positive("hbar", self.hbar);
        v.positive("waist", self.waist);
        v.positive("aperture", self.aperture);
        v.positive("dt", self.dt);
        v.non_negative("source_spread", self.source_spread);
        v.at_least("n", self.n, 1);
        for (name, d) in [
            ("focal", self.focal),
            ("object", self.object),
            ("image", self.image),
        ] {
            if let Some(d) = d {
                v.positive(name, d);
            }
        }
        match self.lens() {
            Ok(l) => {
                v.derive("focal", l.focal);
                v.derive("object", l.object);
                v.derive("image", l.image);
                v.derive(
                    "lens_equation_residual",
                    1.0 / l.object + 1.0 / l.image - 1.0 / l.focal,
                );
                v.derive("magnification", l.magnification());
                let m = l.magnification();
                v.derive("target", [m * self.detection[0], m * self.detection[1]]);
                v.derive("decay_plane", 0.5 * l.object);
            }
            Err(e) => v.error("focal/object/image", e),
        }
        if self.mass > 0.0 {
            v.derive("mu", 0.5 * self.mass);
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let spec = self.spec()?;
        let report = imaging_trajectories(&spec, self.n, ctx.seed)?;
        let mut rows: Vec<TrajectoryRow> = Vec::new();
        for (i, r) in report.runs.iter().enumerate() {
            rows.extend(trajectory_rows(i as u64, &r.pre_lens, 0));
            if let Some(post) = &r.post_lens {
                // particle 2 behind the lens
                rows.extend(trajectory_rows(i as u64, post, 1).into_iter().skip(1));
            }
        }
        ctx.out.write_trajectories("trajectories.csv", &rows)?;
        let summary = json!({
            "runs": report.runs.len(),
            "mean_endpoint": report.mean_endpoint,
            "target": report.target,
            "offset": report.offset,
            "waist": self.waist,
            "offset_within_waist": report.offset < self.waist,
            "exited": report.exited,
            "max_chord_deviation": report.max_chord_deviation,
        });
        let per_run: Vec<Value> = report
            .runs
            .iter()
            .map(|r| {
                json!({
                    "decay_point": r.decay_point,
                    "lens_hit": r.lens_hit,
                    "endpoint": r.endpoint,
                    "status": r.status.as_str(),
                })
            })
            .collect();
        ctx.out.write_json(
            "stats.json",
            "stats",
            &json!({ "summary": summary, "runs": per_run }),
        )?;
        Ok(summary)
    }
}
