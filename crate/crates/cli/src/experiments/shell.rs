use super::{Experiment, RunContext, Validation};
use crate::error::CliResult;
use pilotwave_core::decay::{energy_shell_density, shell_moment, EnergyShellSpec};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::f64::consts::PI;

/// Equal masses; E+ = eplus_frac m c^2 and E- = (1 - gap) E+.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub eplus_frac: f64,
    pub gap: f64,
    pub mass: f64,
    pub hbar: f64,
    pub c: f64,
    /// Curve range in Compton wavelengths.
    pub x_max: f64,
    pub points: usize,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            eplus_frac: 0.02,
            gap: 0.001,
            mass: 1.0,
            hbar: 1.0,
            c: 1.0,
            x_max: 10.0,
            points: 2001,
        }
    }
}

impl Params {
    fn spec(&self) -> CliResult<EnergyShellSpec> {
        Ok(EnergyShellSpec::rest_energy_fraction(
            self.eplus_frac,
            1.0 - self.gap,
            self.mass,
            self.hbar,
            self.c,
        )?)
    }

    fn lambda_c(&self) -> f64 {
        2.0 * PI * self.hbar / (self.mass * self.c)
    }
}

impl Experiment for Params {
    fn check(&self, v: &mut Validation) {
        v.positive("eplus_frac", self.eplus_frac);
        v.positive("mass", self.mass);
        v.positive("hbar", self.hbar);
        v.positive("c", self.c);
        v.positive("x_max", self.x_max);
        v.at_least("points", self.points, 2);
        if !(self.gap > 0.0 && self.gap < 1.0) {
            v.push(
                "gap",
                "config",
                format!("must lie in (0, 1), got {}", self.gap),
            );
        }
        if !v.is_ok() {
            return;
        }
        match self.spec() {
            Ok(s) => {
                let (ap, am) = s.a();
                let l = self.lambda_c();
                v.derive("mu", s.mu());
                v.derive("a_plus_per_lambda_c", ap * l);
                v.derive("a_minus_per_lambda_c", am * l);
                v.derive("g0", s.g0());
            }
            Err(e) => v.error("eplus_frac", e),
        }
    }

    fn run(&self, ctx: &mut RunContext) -> CliResult<Value> {
        let s = self.spec()?;
        let l = self.lambda_c();
        let (ap, am) = s.a();
        let header = vec![
            ("a_plus".to_string(), format!("{:.5}", ap * l)),
            ("a_minus".to_string(), format!("{:.5}", am * l)),
            ("a_units".to_string(), "1/lambda_c".to_string()),
            ("a_plus_full".to_string(), (ap * l).to_string()),
            ("a_minus_full".to_string(), (am * l).to_string()),
            ("g0".to_string(), s.g0().to_string()),
            ("x_units".to_string(), "lambda_c".to_string()),
        ];
        let rows = (0..self.points).map(|i| {
            let x = self.x_max * i as f64 / (self.points - 1) as f64;
            let (g, g2) = energy_shell_density(&s, x * l);
            vec![x.to_string(), g.to_string(), g2.to_string()]
        });
        ctx.out.write_csv(
            "shell_curve.csv",
            "curve",
            &header,
            &["x", "g", "g_squared"],
            rows,
        )?;
        let inner = shell_moment(&s, 5.0 * l, 20_001);
        let outer = shell_moment(&s, 50.0 * l, 400_001);
        let summary = json!({
            "a_plus_per_lambda_c": ap * l,
            "a_minus_per_lambda_c": am * l,
            "g0": s.g0(),
            "mu": s.mu(),
            "weighted_fraction_within_5_lambda_c": inner / outer,
        });
        ctx.out.write_json("stats.json", "stats", &summary)?;
        Ok(summary)
    }
}
