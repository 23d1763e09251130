use super::{Experiment, RunContext, Validation};
use crate::error::CliResult;
use pilotwave_core::benchmarks::EquivarianceCase;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// One of the benchmark cases, or "all".
    pub case: String,
    pub n: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            case: "all".into(),
            n: 10_000,
        }
    }
}

impl Params {
    fn cases(&self) -> Option<Vec<EquivarianceCase>> {
        if self.case == "all" {
            return Some(EquivarianceCase::ALL.to_vec());
        }
        EquivarianceCase::ALL
            .iter()
            .find(|c| c.name() == self.case)
            .map(|c| vec![*c])
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.at_least("n", self.n, 1000);
        match self.cases() {
            Some(cs) => {
                let times: Vec<Value> = cs
                    .iter()
                    .map(|c| json!({ "case": c.name(), "times": c.times() }))
                    .collect();
                v.derive("check_times", times);
            }
            None => {
                let names: Vec<&str> = EquivarianceCase::ALL.iter().map(|c| c.name()).collect();
                v.push(
                    "case",
                    "config",
                    format!(
                        "unknown case {:?}; expected all, {}",
                        self.case,
                        names.join(", ")
                    ),
                );
            }
        }
        v.derive(
            "ks_critical_1pct",
            pilotwave_core::stats::ks_critical_1pct(self.n.max(1)),
        );
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let mut results = Vec::new();
        let mut all = true;
        for case in self.cases().expect("checked") {
            let reports = case.run(self.n, ctx.seed)?;
            let pass = reports.iter().all(|r| r.pass);
            all &= pass;
            results.push(json!({ "case": case.name(), "pass": pass, "reports": reports }));
        }
        ctx.out.write_json(
            "stats.json",
            "stats",
            &json!({ "n": self.n, "cases": results }),
        )?;
        Ok(
            json!({ "n": self.n, "all_pass": all, "cases": results.iter().map(|r| json!({"case": r["case"], "pass": r["pass"]})).collect::<Vec<_>>() }),
        )
    }
}
