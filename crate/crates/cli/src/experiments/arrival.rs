use super::{Experiment, RunContext, Validation};
use crate::error::CliResult;
use crate::output::AxisInfo;
use pilotwave_core::benchmarks::{arrival_benchmark, ARRIVAL_DETECTOR};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;

/// Spin-up Gaussian packet (m = 1, sigma = 1, k0 = (2, 0, 0)) read at a
/// detector point off the packet axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub g: Vec<f64>,
    pub snapshots: usize,
    pub t_final: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            g: vec![0.0, 0.5],
            snapshots: 2001,
            t_final: 10.0,
        }
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.at_least("snapshots", self.snapshots, 3);
        v.positive("t_final", self.t_final);
        if self.g.is_empty() {
            v.push("g", "config", "need at least one g value");
        }
        for (i, g) in self.g.iter().enumerate() {
            if !g.is_finite() {
                v.push(&format!("g[{i}]"), "config", "must be finite");
            }
        }
        v.derive("detector", ARRIVAL_DETECTOR);
        if self.snapshots > 1 {
            v.derive(
                "snapshot_spacing",
                self.t_final / (self.snapshots - 1) as f64,
            );
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let mut flux = Vec::with_capacity(self.g.len() * self.snapshots);
        let mut per_g = Vec::new();
        for &g in &self.g {
            let s = arrival_benchmark(g, self.snapshots, self.t_final)?;
            flux.extend_from_slice(&s.flux);
            per_g.push(json!({ "g": g, "mean": s.mean, "error_estimate": s.error_estimate }));
        }
        let attrs = BTreeMap::from([
            ("quantity".to_string(), json!("|j| at the detector")),
            ("g".to_string(), json!(self.g)),
            ("detector".to_string(), json!(ARRIVAL_DETECTOR)),
        ]);
        let axes = vec![
            AxisInfo {
                name: "g_index".into(),
                min: 0.0,
                max: (self.g.len() - 1) as f64,
                points: self.g.len(),
            },
            AxisInfo {
                name: "t".into(),
                min: 0.0,
                max: self.t_final,
                points: self.snapshots,
            },
        ];
        ctx.out
            .write_field("flux", &[self.g.len(), self.snapshots], axes, attrs, &flux)?;
        let summary = json!({ "detector": ARRIVAL_DETECTOR, "arrival": per_g });
        ctx.out.write_json("stats.json", "stats", &summary)?;
        Ok(summary)
    }
}
