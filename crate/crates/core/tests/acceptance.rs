//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use pilotwave_core::benchmarks::{arrival_benchmark, continuity_convergence, EquivarianceCase};
use pilotwave_core::decay::{
    energy_shell_density, imaging_trajectories, pair_source, pair_trajectories_with,
    sample_pair_starts, shell_moment, transition_distance, DecayPairSpec, EnergyShellSpec,
    ImagingSpec, KcChoice, LensSpec,
};
use pilotwave_core::dkp::{
    algebra, constraint_residual, dkp2_velocity, energy_momentum_current, hamiltonian,
    nonrel_limit_check, Dkp2State, DkpRep, DkpState, DkpWave, NonrelOptions, ObserverVector,
};
use pilotwave_core::guide::{measurement_branching, BranchingSetup, Controls};
use pilotwave_core::matrices::{build_matrix_set, sandwich, MatrixKind, METRIC};
use pilotwave_core::reldirac::{
    dirac2_velocity, dirac_matrices, dirac_velocity, Dirac2State, Dirac2Term, DiracState,
    DiracTerm, EnergySign, ParticleLabel,
};
use pilotwave_core::stats::{binomial_sigma, rng_stream};
use pilotwave_core::C64;
use rand::Rng;
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pair_spec() -> DecayPairSpec {
    DecayPairSpec::new(1.0, 1.0, 2.0, 1.0).unwrap()
}

fn pair_runs() -> (f64, f64, f64, f64) {
    let spec = pair_spec();
    let t_final = 20.0 * spec.mu() * spec.alpha;
    let src = pair_source(&spec).unwrap();
    let starts = sample_pair_starts(&spec, 100, 5.0, 11);
    let clock = Instant::now();
    let mut err = 0.0f64;
    let mut drift = 0.0f64;
    let mut scale = 0.0f64;
    for s in &starts {
        let r = pair_trajectories_with(&spec, &src, s, t_final, &Controls::new(0.01)).unwrap();
        err = err.max(r.max_relative_error);
        drift = drift.max(r.momentum_drift);
        for cfg in &r.numeric.configs {
            let m: f64 = (0..3)
                .map(|k| {
                    (spec.m1 * cfg.positions[0][k]).abs() + (spec.m2 * cfg.positions[1][k]).abs()
                })
                .sum();
            scale = scale.max(m);
        }
    }
    (err, drift, scale, clock.elapsed().as_secs_f64())
}

fn criterion_1_2() -> (Outcome, Outcome) {
    let (err, drift, scale, secs) = pair_runs();
    (
        outcome(
            err < 1e-6 && secs < 10.0,
            format!("max relative error {err:.2e} over 100 pairs in {secs:.2} s"),
        ),
        outcome(
            drift < 1e-8 * scale,
            format!("max |m1 x1 + m2 x2 - const| {drift:.2e}, scale {scale:.2}"),
        ),
    )
}

fn shell() -> EnergyShellSpec {
    EnergyShellSpec::rest_energy_fraction(0.02, 0.999, 1.0, 1.0, 1.0).unwrap()
}

fn criterion_3() -> Outcome {
    let s = shell();
    let lambda_c = 2.0 * PI / 1.0;
    let (ap, am) = s.a();
    let (ap, am) = (ap * lambda_c, am * lambda_c);
    let six = |v: f64, want: f64| (v - want).abs() < 5e-6;
    let expect = 0.5 * (s.a().0.powi(2) - s.a().1.powi(2));
    let near = energy_shell_density(&s, 1e-7 / s.a().0).0;
    let g0 = energy_shell_density(&s, 0.0).0;
    let g_ok = ((g0 - expect) / expect).abs() < 1e-9 && ((near - expect) / expect).abs() < 1e-9;
    outcome(
        six(ap, 5.58309) && six(am, 5.58023) && g_ok,
        format!("a+ = {ap:.5}, a- = {am:.5} (per lambda_c, expected 5.58309 and 5.58023), g(0) match {g_ok}"),
    )
}

fn shell_mass() -> Outcome {
    let s = shell();
    let lambda_c = 2.0 * PI;
    let inner = shell_moment(&s, 5.0 * lambda_c, 20_001);
    let outer = shell_moment(&s, 50.0 * lambda_c, 400_001);
    let ratio = inner / outer;
    outcome(
        ratio > 0.5,
        format!(
            "x^2-weighted g^2 within 5 lambda_c over 50 lambda_c = {ratio:.4} (expected > 0.5)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let r = transition_distance(2e-3, &KcChoice::Wavelength { lambda: 351.1e-9 });
    outcome((60.0..=80.0).contains(&r), format!("R = {r:.2} m"))
}

fn criterion_5() -> Outcome {
    let clock = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for case in EquivarianceCase::ALL {
        match case.run(10_000, 21) {
            Ok(reports) => {
                let worst = reports
                    .iter()
                    .map(|r| r.ks.iter().fold(0.0f64, |a, &b| a.max(b)) / r.critical)
                    .fold(0.0f64, f64::max);
                let ok = reports.len() == 2 && reports.iter().all(|r| r.pass && r.t_check > 0.0);
                pass &= ok;
                parts.push(format!("{} worst KS/critical {worst:.2}", case.name()));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{} error {e}", case.name()));
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        pass && secs < 300.0,
        format!("{}; {secs:.1} s", parts.join(", ")),
    )
}

fn criterion_6() -> Outcome {
    let r = continuity_convergence(2).unwrap();
    let ratio = r[0] / r[1];
    outcome(
        ratio >= 3.5,
        format!("residual {:.3e} -> {:.3e}, ratio {ratio:.2}", r[0], r[1]),
    )
}

fn random_p(rng: &mut impl Rng, span: f64) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(-span..span))
}

fn random_c(rng: &mut impl Rng) -> C64 {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn criterion_7() -> Outcome {
    let mut rng = rng_stream(7, 0);
    let alpha = &dirac_matrices().alpha;
    let mut dirac_bad = 0;
    let mut fastest = 0.0f64;
    for _ in 0..10_000 {
        let terms: Vec<DiracTerm> = (0..rng.random_range(1..5))
            .map(|_| {
                let sign = if rng.random_bool(0.5) {
                    EnergySign::Positive
                } else {
                    EnergySign::Negative
                };
                DiracTerm::new(
                    random_c(&mut rng),
                    random_p(&mut rng, 4.0),
                    sign,
                    [random_c(&mut rng), random_c(&mut rng)],
                )
            })
            .collect();
        let state = DiracState::new(rng.random_range(0.2..2.0), terms).unwrap();
        let x = random_p(&mut rng, 10.0);
        let psi = state.amplitude(&x, rng.random_range(-5.0..5.0));
        let rho: f64 = psi.iter().map(|v| v.norm_sqr()).sum();
        let j: Vec<f64> = alpha.iter().map(|a| sandwich(&psi, a).re).collect();
        let jn = j.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rho > 0.0 {
            fastest = fastest.max(jn / rho);
        }
        if jn > rho * (1.0 + 1e-12) {
            dirac_bad += 1;
        }
    }
    let mut dkp_bad = 0;
    for i in 0..10_000 {
        let rep = if i % 2 == 0 {
            DkpRep::Spin0
        } else {
            DkpRep::Spin1
        };
        let massless = i % 4 >= 2;
        let waves: Vec<DkpWave> = (0..rng.random_range(1..4))
            .map(|_| {
                let mut p = random_p(&mut rng, 3.0);
                if p.iter().map(|v| v * v).sum::<f64>() < 1e-2 {
                    p[0] += 0.5;
                }
                match rep {
                    DkpRep::Spin0 => DkpWave::Scalar {
                        coefficient: random_c(&mut rng),
                        p,
                        energy: None,
                    },
                    DkpRep::Spin1 => DkpWave::Vector {
                        coefficient: random_c(&mut rng),
                        p,
                        polarization: [random_c(&mut rng), random_c(&mut rng), random_c(&mut rng)],
                        energy: None,
                    },
                }
            })
            .collect();
        let state = DkpState::new(rep, rng.random_range(0.2..2.0), massless, &waves).unwrap();
        let v: [f64; 3] = random_p(&mut rng, 1.0);
        let vn = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        let n = [1.0, v[0] / vn, v[1] / vn, v[2] / vn];
        let x = random_p(&mut rng, 5.0);
        let th = state.theta(&x, rng.random_range(-3.0..3.0));
        let j: [f64; 4] =
            std::array::from_fn(|m| (0..4).map(|k| th[m][k] * METRIC[k] * n[k]).sum());
        let scale: f64 = th
            .iter()
            .flatten()
            .map(|v| v.abs())
            .sum::<f64>()
            .max(1e-300);
        let jj = j[0] * j[0] - j[1] * j[1] - j[2] * j[2] - j[3] * j[3];
        if j[0] < -1e-10 * scale || jj < -1e-10 * scale * scale {
            dkp_bad += 1;
        }
    }
    outcome(
        dirac_bad == 0 && dkp_bad == 0,
        format!("Dirac violations {dirac_bad} (max |v| {fastest:.6}), DKP violations {dkp_bad}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = rng_stream(8, 0);
    let mut worst_c = 0.0f64;
    for rep in [DkpRep::Spin0, DkpRep::Spin1] {
        for massless in [false, true] {
            for _ in 0..200 {
                let p = random_p(&mut rng, 3.0);
                let w = match rep {
                    DkpRep::Spin0 => DkpWave::Scalar {
                        coefficient: c(1.0, 0.0),
                        p,
                        energy: None,
                    },
                    DkpRep::Spin1 => DkpWave::Vector {
                        coefficient: c(1.0, 0.0),
                        p,
                        polarization: [random_c(&mut rng), random_c(&mut rng), random_c(&mut rng)],
                        energy: None,
                    },
                };
                let s = DkpState::new(rep, 1.0, massless, &[w]).unwrap();
                for t in &s.terms {
                    worst_c = worst_c.max(constraint_residual(
                        rep,
                        t.p,
                        s.mass,
                        massless,
                        &t.components,
                    ));
                }
            }
        }
    }
    let mut worst_h = 0.0f64;
    for rep in [DkpRep::Spin0, DkpRep::Spin1] {
        for _ in 0..100 {
            let p = random_p(&mut rng, 3.0);
            let m = rng.random_range(0.2..2.0);
            let h = hamiltonian(rep, p, m);
            let e2 = p.iter().map(|v| v * v).sum::<f64>() + m * m;
            let d = &h * &h * &h - &h * c(e2, 0.0);
            let rel = d.iter().fold(0.0f64, |a, v| a.max(v.norm())) / e2.powf(1.5);
            worst_h = worst_h.max(rel);
        }
    }
    let idempotent = [MatrixKind::Dkp5, MatrixKind::Dkp10].iter().all(|&k| {
        let g = build_matrix_set(k)
            .exact_projector
            .expect("DKP sets carry the massless projector");
        &g * &g == g
    });
    let _ = algebra(DkpRep::Spin1);
    outcome(
        worst_c < 1e-10 && worst_h < 1e-12 && idempotent,
        format!("max constraint residual {worst_c:.1e}, max relative H^3 defect {worst_h:.1e}, gamma^2 = gamma exactly: {idempotent}"),
    )
}

fn criterion_9() -> Outcome {
    let eps = [0.2, 0.1, 0.05];
    let mut pass = true;
    let mut parts = Vec::new();
    for (rep, name) in [(DkpRep::Spin0, "spin 0"), (DkpRep::Spin1, "spin 1")] {
        let pts = nonrel_limit_check(rep, &eps, &NonrelOptions::default()).unwrap();
        let d: Vec<f64> = pts.iter().map(|p| p.deviation).collect();
        let r = [d[1] / d[0], d[2] / d[1]];
        pass &= r.iter().all(|&x| x <= 0.35);
        parts.push(format!(
            "{name} D = {:.2e}, {:.2e}, {:.2e} (ratios {:.3}, {:.3})",
            d[0], d[1], d[2], r[0], r[1]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_10() -> Outcome {
    let setup = BranchingSetup {
        coefficients: vec![c(0.6, 0.0), c(0.0, 0.8)],
        ..Default::default()
    };
    let n = 10_000;
    let r = measurement_branching(&setup, n, 10).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (f, b)) in r.fractions.iter().zip(&r.born).enumerate() {
        let z = (f - b).abs() / binomial_sigma(*b, n);
        pass &= z <= 3.0;
        parts.push(format!("channel {k}: {f:.4} vs {b:.4} ({z:.2} sigma)"));
    }
    outcome(pass, format!("{}; lost {}", parts.join(", "), r.lost))
}

fn imaging_offset(waist: f64) -> (f64, usize) {
    let spec = ImagingSpec {
        pair: DecayPairSpec::new(1.0, 1.0, 1.0, 1.0).unwrap(),
        lens: LensSpec::new(Some(50.0), Some(100.0), Some(100.0)).unwrap(),
        detection: [3.0, -2.0],
        source_spread: 0.5,
        aperture: 50.0,
        waist,
        dt: 0.05,
    };
    let r = imaging_trajectories(&spec, 200, 12).unwrap();
    (r.offset, r.exited)
}

fn criterion_11() -> Outcome {
    let ws = [1.0, 0.25, 0.0625];
    let res: Vec<(f64, usize)> = ws.iter().map(|&w| imaging_offset(w)).collect();
    let inside = res.iter().zip(&ws).all(|((o, _), w)| o < w);
    let monotone = res.windows(2).all(|p| p[1].0 < p[0].0);
    outcome(
        inside && monotone,
        format!(
            "|mean + a| = {:.2e}, {:.2e}, {:.2e} for w = 1, 1/4, 1/16",
            res[0].0, res[1].0, res[2].0
        ),
    )
}

fn criterion_12() -> Outcome {
    let a = arrival_benchmark(0.0, 2001, 10.0).unwrap();
    let b = arrival_benchmark(0.5, 2001, 10.0).unwrap();
    let diff = (a.mean - b.mean).abs();
    let err = a.error_estimate.max(b.error_estimate);
    outcome(
        diff > 10.0 * err,
        format!(
            "mean arrival {:.6} vs {:.6}, difference {diff:.3e}, quadrature error {err:.1e}",
            a.mean, b.mean
        ),
    )
}

fn criterion_13() -> Outcome {
    let mut rng = rng_stream(13, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let la = [
            ParticleLabel::up(random_p(&mut rng, 2.0)),
            ParticleLabel::up(random_p(&mut rng, 2.0)),
        ];
        let lb = ParticleLabel {
            p: random_p(&mut rng, 2.0),
            sign: EnergySign::Positive,
            chi: [random_c(&mut rng), random_c(&mut rng)],
        };
        let ca = [random_c(&mut rng), random_c(&mut rng)];
        let two = Dirac2State::new(
            1.0,
            (0..2)
                .map(|k| Dirac2Term {
                    coefficient: ca[k],
                    first: la[k].clone(),
                    second: lb.clone(),
                })
                .collect(),
            false,
        )
        .unwrap();
        let one_a = DiracState::new(
            1.0,
            (0..2)
                .map(|k| DiracTerm::new(ca[k], la[k].p, la[k].sign, la[k].chi))
                .collect(),
        )
        .unwrap();
        let one_b = DiracState::new(
            1.0,
            vec![DiracTerm::new(c(1.0, 0.0), lb.p, lb.sign, lb.chi)],
        )
        .unwrap();
        let (x1, x2) = (random_p(&mut rng, 4.0), random_p(&mut rng, 4.0));
        let t = rng.random_range(-2.0..2.0);
        if let (Ok((v1, v2)), Ok(u1), Ok(u2)) = (
            dirac2_velocity(&two, &x1, &x2, t, 1e-12),
            dirac_velocity(&one_a, &x1, t, 1e-12),
            dirac_velocity(&one_b, &x2, t, 1e-12),
        ) {
            for k in 0..3 {
                worst = worst
                    .max((v1.v[k] - u1.v[k]).abs())
                    .max((v2.v[k] - u2.v[k]).abs());
            }
        }
        let sa = DkpState::new(
            DkpRep::Spin1,
            1.0,
            false,
            &[DkpWave::Vector {
                coefficient: c(1.0, 0.0),
                p: random_p(&mut rng, 2.0),
                polarization: [random_c(&mut rng), random_c(&mut rng), random_c(&mut rng)],
                energy: None,
            }],
        )
        .unwrap();
        let sb = DkpState::new(
            DkpRep::Spin1,
            1.0,
            false,
            &[
                DkpWave::Vector {
                    coefficient: random_c(&mut rng),
                    p: random_p(&mut rng, 2.0),
                    polarization: [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
                    energy: None,
                },
                DkpWave::Vector {
                    coefficient: random_c(&mut rng),
                    p: random_p(&mut rng, 2.0),
                    polarization: [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)],
                    energy: None,
                },
            ],
        )
        .unwrap();
        let n = ObserverVector::rest();
        let pair = Dkp2State::product(sa.clone(), sb.clone()).unwrap();
        if let (Ok((v1, v2)), Ok(u1), Ok(u2)) = (
            dkp2_velocity(&pair, &n, &x1, &x2, t, 1e-12),
            energy_momentum_current(&sa, &n, &x1, t, 1e-12),
            energy_momentum_current(&sb, &n, &x2, t, 1e-12),
        ) {
            for k in 0..3 {
                worst = worst
                    .max((v1[k] - u1.v[k]).abs())
                    .max((v2[k] - u2.v[k]).abs());
            }
        }
    }
    outcome(
        worst < 1e-10,
        format!("max velocity difference {worst:.1e}"),
    )
}

fn main() {
    let clock = Instant::now();
    let (c1, c2) = criterion_1_2();
    let results: Vec<(&str, Outcome)> = vec![
        ("1", c1),
        ("2", c2),
        ("3", criterion_3()),
        ("3b shell mass", shell_mass()),
        ("4", criterion_4()),
        ("5", criterion_5()),
        ("6", criterion_6()),
        ("7", criterion_7()),
        ("8", criterion_8()),
        ("9", criterion_9()),
        ("10", criterion_10()),
        ("11", criterion_11()),
        ("12", criterion_12()),
        ("13", criterion_13()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "criterion {name}: {} | {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} passed in {:.1} s",
        results.len() - failed,
        results.len(),
        clock.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
