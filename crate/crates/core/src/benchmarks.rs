//! Reference setups shared by the CLI, the acceptance suite and the benches.

use crate::currents::{continuity_residual, SpinSpec};
use crate::error::Result;
use crate::evolve::{propagate_to, Propagator};
use crate::fieldmodes::{mode_equivariance, Dispersion, Mode};
use crate::grid::{Axis, Grid};
use crate::guide::{
    arrival_time_stats, equivariance_check, ArrivalStats, EquivarianceOptions, EquivarianceReport,
};
use crate::wavefunction::{AnalyticWave, Ctx, Eval, Family, WaveFunction, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Decaying pair on one axis per particle times a free Gaussian in the
/// centre-of-mass coordinate, which makes the state normalisable.
#[derive(Debug, Clone, Copy)]
pub struct PairPacket {
    pub alpha: f64,
    pub sigma_cm: f64,
}

impl AnalyticWave for PairPacket {
    fn components(&self) -> usize {
        1
    }

    fn eval(&self, ctx: &Ctx, x: &[f64], t: f64) -> Eval {
        let (m1, m2, h) = (ctx.masses[0], ctx.masses[1], ctx.hbar);
        let m = m1 + m2;
        let mu = m1 * m2 / m;
        let cm = (m1 * x[0] + m2 * x[1]) / m;
        let r = x[0] - x[1];
        let w = C64::new(self.alpha, t / (2.0 * mu));
        let d = (PI * h / w).sqrt() * (-r * r / (4.0 * h * w)).exp();
        let dd = -r / (2.0 * h * w);
        let s2 = self.sigma_cm * self.sigma_cm;
        let st = C64::new(1.0, h * t / (2.0 * m * s2));
        let g = (2.0 * PI * s2).powf(-0.25) / st.sqrt() * (-cm * cm / (4.0 * s2 * st)).exp();
        let dg = -cm / (2.0 * s2 * st);
        let v = g * d;
        Eval {
            value: vec![v],
            grad: vec![vec![v * (m1 / m * dg + dd)], vec![v * (m2 / m * dg - dd)]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivarianceCase {
    Gaussian,
    Pauli,
    DecayPair,
    FieldMode,
}

impl EquivarianceCase {
    pub const ALL: [EquivarianceCase; 4] = [
        EquivarianceCase::Gaussian,
        EquivarianceCase::Pauli,
        EquivarianceCase::DecayPair,
        EquivarianceCase::FieldMode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EquivarianceCase::Gaussian => "gaussian",
            EquivarianceCase::Pauli => "pauli",
            EquivarianceCase::DecayPair => "decay-pair",
            EquivarianceCase::FieldMode => "field-mode",
        }
    }

    /// Check times (both non-zero).
    pub fn times(&self) -> [f64; 2] {
        match self {
            EquivarianceCase::FieldMode => {
                let period = 2.0 * PI / 1.3;
                [period / 3.0, 2.0 * period / 3.0]
            }
            _ => [1.0, 2.5],
        }
    }

    pub fn run(&self, n: usize, seed: u64) -> Result<Vec<EquivarianceReport>> {
        let t = self.times();
        match self {
            EquivarianceCase::Gaussian => {
                let psi = WaveFunction::parametric(
                    Family::Gaussian {
                        center: vec![-1.0],
                        k0: vec![1.5],
                        sigma: vec![0.8],
                    },
                    &[1],
                    &[1.0],
                    1.0,
                )?;
                let opts = EquivarianceOptions {
                    seed,
                    bounds: Some(vec![(-12.0, 16.0)]),
                    quad_points: 4001,
                    traj_dt: Some(0.01),
                    ..Default::default()
                };
                equivariance_check(
                    &psi,
                    &Propagator::analytic(0.05, SpinSpec::new(0, 1.0)?),
                    n,
                    &t,
                    &opts,
                )
            }
            EquivarianceCase::Pauli => {
                let up = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
                let psi = WaveFunction::parametric(
                    Family::SpinProduct {
                        scalar: Box::new(Family::Gaussian {
                            center: vec![0.0, 0.0],
                            k0: vec![1.0, 0.5],
                            sigma: vec![0.7, 1.0],
                        }),
                        chi: up,
                    },
                    &[2],
                    &[1.0],
                    1.0,
                )?;
                let opts = EquivarianceOptions {
                    seed,
                    bounds: Some(vec![(-10.0, 13.0), (-11.0, 12.0)]),
                    quad_points: 401,
                    traj_dt: Some(0.01),
                    ..Default::default()
                };
                let spin = SpinSpec::new(1, 1.0)?.with_g(0.5);
                equivariance_check(&psi, &Propagator::analytic(0.05, spin), n, &t, &opts)
            }
            EquivarianceCase::DecayPair => {
                let psi = WaveFunction::parametric(
                    Family::Custom(Arc::new(PairPacket {
                        alpha: 0.5,
                        sigma_cm: 1.0,
                    })),
                    &[1, 1],
                    &[1.0, 1.0],
                    1.0,
                )?;
                let opts = EquivarianceOptions {
                    seed,
                    bounds: Some(vec![(-10.0, 10.0), (-10.0, 10.0)]),
                    quad_points: 601,
                    traj_dt: Some(0.01),
                    ..Default::default()
                };
                equivariance_check(
                    &psi,
                    &Propagator::analytic(0.05, SpinSpec::new(0, 1.0)?),
                    n,
                    &t,
                    &opts,
                )
            }
            EquivarianceCase::FieldMode => {
                let c = std::f64::consts::FRAC_1_SQRT_2;
                let mode = Mode::new(
                    1.3,
                    Dispersion::Massless,
                    1.0,
                    vec![C64::new(c, 0.0), C64::new(0.0, c)],
                    0.0,
                )?;
                mode_equivariance(&mode, 1.0, n, &t, 0.005, seed)
            }
        }
    }
}

/// Continuity residual max-norms of the split-step free Gaussian, halving dt
/// and dx together at every level.
pub fn continuity_convergence(levels: usize) -> Result<Vec<f64>> {
    let spin = SpinSpec::new(0, 1.0)?;
    let base = WaveFunction::parametric(
        Family::Gaussian {
            center: vec![-1.0],
            k0: vec![2.0],
            sigma: vec![1.0],
        },
        &[1],
        &[1.0],
        1.0,
    )?;
    (0..levels)
        .map(|l| {
            let f = (1usize << l) as f64;
            let points = 64 * (1usize << l) + 1;
            let dt = 0.04 / f;
            let grid = Arc::new(Grid::new(vec![1], vec![Axis::new(-16.0, 16.0, points)])?);
            let psi0 = base.sample_onto(grid)?;
            let prop = Propagator::split_step(dt, spin.clone());
            let t1 = 0.5;
            let t2 = t1 + dt;
            let snaps = propagate_to(&psi0, &prop, t2, &[t1, t2])?;
            Ok(continuity_residual(&snaps[0], &snaps[1], &spin, None)?.max_norm)
        })
        .collect()
}

/// Spin-up Gaussian packet moving along x; |j| is read at a detector offset in y.
pub fn arrival_packet() -> Result<WaveFunction> {
    WaveFunction::parametric(
        Family::SpinProduct {
            scalar: Box::new(Family::Gaussian {
                center: vec![0.0, 0.0, 0.0],
                k0: vec![2.0, 0.0, 0.0],
                sigma: vec![1.0, 1.0, 1.0],
            }),
            chi: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        },
        &[3],
        &[1.0],
        1.0,
    )
}

pub const ARRIVAL_DETECTOR: [f64; 3] = [5.0, 1.0, 0.0];

/// Mean arrival time at `ARRIVAL_DETECTOR` for gyromagnetic factor `g`.
pub fn arrival_benchmark(g: f64, snapshots: usize, t_final: f64) -> Result<ArrivalStats> {
    let psi = arrival_packet()?;
    let snaps: Vec<WaveFunction> = (0..snapshots)
        .map(|i| psi.at_time(t_final * i as f64 / (snapshots - 1) as f64))
        .collect::<Result<_>>()?;
    arrival_time_stats(
        &snaps,
        &ARRIVAL_DETECTOR,
        &SpinSpec::new(1, 1.0)?.with_g(g),
        0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_packet_gradient() {
        let psi = WaveFunction::parametric(
            Family::Custom(Arc::new(PairPacket {
                alpha: 0.7,
                sigma_cm: 1.3,
            })),
            &[1, 1],
            &[1.0, 2.0],
            1.0,
        )
        .unwrap();
        let x = [0.3, -0.5];
        let e = psi.eval_at(&x, 0.8).unwrap();
        let h = 1e-6;
        for a in 0..2 {
            let mut p = x;
            let mut m = x;
            p[a] += h;
            m[a] -= h;
            let fd = (psi.eval_at(&p, 0.8).unwrap().value[0]
                - psi.eval_at(&m, 0.8).unwrap().value[0])
                / (2.0 * h);
            assert!((fd - e.grad[a][0]).norm() < 1e-7);
        }
    }
}
