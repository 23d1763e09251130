use num_complex::Complex64 as C64;
use pilotwave_core::currents::{current, EmPotential, SpinSpec};
use pilotwave_core::evolve::{propagate_to, Potential, Propagator};
use pilotwave_core::guide::{
    integrate_ensemble, integrate_trajectory, order_preserved, Controls, WaveVelocity,
};
use pilotwave_core::wavefunction::{AnalyticWave, Ctx, Eval};
use pilotwave_core::{BeableConfig, Family, Grid, WaveFunction};
use proptest::prelude::*;
use std::sync::Arc;

fn gaussian(center: Vec<f64>, k0: Vec<f64>, sigma: Vec<f64>) -> Family {
    Family::Gaussian { center, k0, sigma }
}

fn unit_spinor(raw: &[(f64, f64)]) -> Vec<C64> {
    let v: Vec<C64> = raw.iter().map(|&(a, b)| C64::new(a, b)).collect();
    let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|c| c / n).collect()
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-300)
}

fn spin_state(twice_s: u8, seed: &[(f64, f64)], offset: [f64; 3], k: [f64; 3]) -> Family {
    let d = twice_s as usize + 1;
    let chi_a = unit_spinor(&seed[..d]);
    let chi_b = unit_spinor(&seed[d..2 * d]);
    Family::Superposition(vec![
        (
            C64::new(1.0, 0.0),
            Family::SpinProduct {
                scalar: Box::new(gaussian(vec![0.0; 3], k.to_vec(), vec![1.0, 1.2, 0.9])),
                chi: chi_a,
            },
        ),
        (
            C64::new(0.4, 0.3),
            Family::SpinProduct {
                scalar: Box::new(gaussian(offset.to_vec(), vec![0.0; 3], vec![0.8, 1.0, 1.1])),
                chi: chi_b,
            },
        ),
    ])
}

fn complex_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.1f64..1.0, -1.0f64..1.0)
}

/// `exp(i q b.x / (hbar c)) psi` for a single particle.
#[derive(Debug)]
struct Gauged {
    inner: Family,
    b: [f64; 3],
    q_over_hbar_c: f64,
}

impl AnalyticWave for Gauged {
    fn components(&self) -> usize {
        self.inner.components()
    }
    fn eval(&self, ctx: &Ctx, x: &[f64], t: f64) -> Eval {
        let e = self.inner.eval(ctx, x, t);
        let theta: f64 = (0..3).map(|k| self.b[k] * x[k]).sum();
        let ph = C64::from_polar(1.0, self.q_over_hbar_c * theta);
        let value: Vec<C64> = e.value.iter().map(|v| ph * v).collect();
        let grad = (0..3)
            .map(|k| {
                e.grad[k]
                    .iter()
                    .zip(&e.value)
                    .map(|(g, v)| ph * (g + C64::new(0.0, self.q_over_hbar_c * self.b[k]) * v))
                    .collect()
            })
            .collect();
        Eval { value, grad }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn total_current_is_convective_plus_spin(
        twice_s in 0u8..=2,
        seed in prop::collection::vec(complex_pair(), 10),
        offset in prop::array::uniform3(-1.5f64..1.5),
        k in prop::array::uniform3(-2.0f64..2.0),
        at in prop::array::uniform3(-1.0f64..1.0),
        g in 0.0f64..2.5,
    ) {
        let spin = SpinSpec::new(twice_s, 1.0).unwrap().with_g(g);
        let psi = WaveFunction::parametric(spin_state(twice_s, &seed, offset, k), &[3], &[1.0], 1.0).unwrap();
        let c = current(&psi, &spin, None, &at, 0.3).unwrap();
        let scale = c.j[0].iter().chain(&c.j_c[0]).chain(&c.j_s[0]).fold(0.0f64, |m, v| m.max(v.abs()));
        for kk in 0..3 {
            prop_assert!(rel(c.j[0][kk], c.j_c[0][kk] + c.j_s[0][kk], scale) <= 1e-10);
        }
    }

    #[test]
    fn velocity_ignores_global_constant(
        twice_s in 0u8..=2,
        seed in prop::collection::vec(complex_pair(), 10),
        offset in prop::array::uniform3(-1.5f64..1.5),
        k in prop::array::uniform3(-2.0f64..2.0),
        at in prop::array::uniform3(-1.0f64..1.0),
        modulus in 0.2f64..5.0,
        theta in 0.0f64..std::f64::consts::TAU,
    ) {
        let spin = SpinSpec::new(twice_s, 1.0).unwrap();
        let psi = WaveFunction::parametric(spin_state(twice_s, &seed, offset, k), &[3], &[1.0], 1.0).unwrap();
        let scaled = psi.scaled(C64::from_polar(modulus, theta));
        let v0 = current(&psi, &spin, None, &at, 0.0).unwrap().velocity(0.0).unwrap();
        let v1 = current(&scaled, &spin, None, &at, 0.0).unwrap().velocity(0.0).unwrap();
        let scale = v0[0].iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for kk in 0..3 {
            prop_assert!(rel(v0[0][kk], v1[0][kk], scale) <= 1e-12);
        }
    }

    #[test]
    fn gauge_transformation_leaves_density_and_current(
        twice_s in 0u8..=2,
        seed in prop::collection::vec(complex_pair(), 10),
        offset in prop::array::uniform3(-1.5f64..1.5),
        k in prop::array::uniform3(-2.0f64..2.0),
        at in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        a0 in prop::array::uniform3(-0.5f64..0.5),
        charge in 0.3f64..2.0,
    ) {
        let c_light = 1.0;
        let spin = SpinSpec::new(twice_s, 1.0).unwrap();
        let base = spin_state(twice_s, &seed, offset, k);
        let psi = WaveFunction::parametric(base.clone(), &[3], &[1.0], 1.0).unwrap();
        let gauged = WaveFunction::parametric(
            Family::Custom(Arc::new(Gauged { inner: base, b, q_over_hbar_c: charge / c_light })),
            &[3],
            &[1.0],
            1.0,
        )
        .unwrap();
        let em = EmPotential::new(charge, c_light).with_vector(Arc::new(move |_, _| a0));
        let em_g = EmPotential::new(charge, c_light)
            .with_vector(Arc::new(move |_, _| std::array::from_fn(|i| a0[i] + b[i])));
        let c0 = current(&psi, &spin, Some(&em), &at, 0.2).unwrap();
        let c1 = current(&gauged, &spin, Some(&em_g), &at, 0.2).unwrap();
        prop_assert!(rel(c0.rho, c1.rho, c0.rho) <= 1e-8);
        let scale = c0.j[0].iter().fold(c0.rho, |m, v| m.max(v.abs()));
        for kk in 0..3 {
            prop_assert!(rel(c0.j[0][kk], c1.j[0][kk], scale) <= 1e-8);
        }
    }

    #[test]
    fn trajectories_ignore_global_phase(
        x0 in -1.5f64..1.5,
        theta in 0.0f64..std::f64::consts::TAU,
        k0 in -1.0f64..1.0,
    ) {
        let spin = SpinSpec::new(0, 1.0).unwrap();
        let fam = Family::Superposition(vec![
            (C64::new(1.0, 0.0), gaussian(vec![-1.0], vec![k0], vec![0.7])),
            (C64::new(0.5, 0.2), gaussian(vec![1.2], vec![-0.5], vec![0.9])),
        ]);
        let psi = WaveFunction::parametric(fam, &[1], &[1.0], 1.0).unwrap();
        let rotated = psi.scaled(C64::from_polar(1.0, theta));
        let start = BeableConfig::from_flat(&[x0], &[1], 0.0);
        let controls = Controls::new(0.01);
        let a = integrate_trajectory(&start, &WaveVelocity::new(psi, spin.clone()), 1.0, &controls);
        let b = integrate_trajectory(&start, &WaveVelocity::new(rotated, spin), 1.0, &controls);
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.configs.len(), b.configs.len());
        for (p, q) in a.configs.iter().zip(&b.configs) {
            prop_assert!((p.positions[0][0] - q.positions[0][0]).abs() <= 1e-12 * (1.0 + p.positions[0][0].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn one_dimensional_trajectories_never_cross(
        sep in 1.0f64..3.0,
        k0 in -1.5f64..1.5,
        weight in complex_pair(),
    ) {
        let spin = SpinSpec::new(0, 1.0).unwrap();
        let fam = Family::Superposition(vec![
            (C64::new(1.0, 0.0), gaussian(vec![-sep / 2.0], vec![k0], vec![0.6])),
            (C64::new(weight.0, weight.1), gaussian(vec![sep / 2.0], vec![-k0], vec![0.8])),
        ]);
        let psi = WaveFunction::parametric(fam, &[1], &[1.0], 1.0).unwrap();
        let starts: Vec<BeableConfig> = (0..40)
            .map(|i| BeableConfig::from_flat(&[-3.0 + 6.0 * i as f64 / 39.0], &[1], 0.0))
            .collect();
        let recs = integrate_ensemble(&starts, &WaveVelocity::new(psi, spin), 2.0, &Controls::new(0.005));
        prop_assert!(order_preserved(&recs));
    }

    #[test]
    fn interpolation_converges_quadratically(
        center in -0.5f64..0.5,
        sigma in 0.6f64..1.5,
        k0 in -1.0f64..1.0,
    ) {
        let psi = WaveFunction::parametric(gaussian(vec![center], vec![k0], vec![sigma]), &[1], &[1.0], 1.0).unwrap();
        let err = |points: usize| {
            let g = Arc::new(Grid::line(-8.0, 8.0, points).unwrap());
            let h = g.spacing(0);
            let s = psi.sample_onto(g).unwrap();
            (0..points - 1)
                .map(|i| {
                    let x = -8.0 + (i as f64 + 0.37) * h;
                    let a = s.evaluate(&[x]).unwrap()[0];
                    let b = psi.evaluate(&[x]).unwrap()[0];
                    (a - b).norm()
                })
                .fold(0.0f64, f64::max)
        };
        let coarse = err(161);
        let fine = err(321);
        prop_assert!(coarse / fine >= 3.5, "ratio {}", coarse / fine);
    }
}

#[test]
fn split_step_conserves_norm_in_a_trap() {
    let grid = Arc::new(Grid::line(-12.0, 12.0, 256).unwrap());
    let psi =
        WaveFunction::parametric(gaussian(vec![1.5], vec![0.7], vec![0.8]), &[1], &[1.0], 1.0)
            .unwrap()
            .sample_onto(grid)
            .unwrap()
            .normalize()
            .unwrap();
    let v: Potential = Arc::new(|x: &[f64], _| 0.5 * 0.6 * x[0] * x[0]);
    let prop = Propagator::split_step(0.005, SpinSpec::new(0, 1.0).unwrap()).with_potential(v);
    let out = propagate_to(&psi, &prop, 5.0, &[5.0]).unwrap();
    let n = out[0].norm_squared().unwrap();
    assert!((n.sqrt() - 1.0).abs() <= 1e-8, "norm {n}");
}

#[test]
fn free_evolution_keeps_spin_factor() {
    let grid = Arc::new(Grid::line(-15.0, 15.0, 512).unwrap());
    let chi = unit_spinor(&[(0.6, 0.1), (0.3, -0.7)]);
    let scalar = gaussian(vec![0.5], vec![1.0], vec![0.9]);
    let phi = WaveFunction::parametric(scalar.clone(), &[1], &[1.0], 1.0)
        .unwrap()
        .sample_onto(grid.clone())
        .unwrap();
    let spinor = WaveFunction::parametric(
        Family::SpinProduct {
            scalar: Box::new(scalar),
            chi: chi.clone(),
        },
        &[1],
        &[1.0],
        1.0,
    )
    .unwrap()
    .sample_onto(grid.clone())
    .unwrap();
    let phi_t = propagate_to(
        &phi,
        &Propagator::split_step(0.01, SpinSpec::new(0, 1.0).unwrap()),
        2.0,
        &[2.0],
    )
    .unwrap();
    let spin_t = propagate_to(
        &spinor,
        &Propagator::split_step(0.01, SpinSpec::new(1, 1.0).unwrap()),
        2.0,
        &[2.0],
    )
    .unwrap();
    let (a, b) = (phi_t[0].field().unwrap(), spin_t[0].field().unwrap());
    let mut worst = 0.0f64;
    for (c, &s) in chi.iter().enumerate() {
        for (p, q) in a.component(0).iter().zip(b.component(c)) {
            worst = worst.max((p * s - q).norm());
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst}");
}
