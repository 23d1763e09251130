//! Dirac guidance for finite superpositions of free plane-wave spinors.
//!
//! Units are natural (hbar = c = 1). Spinors use the Dirac-Pauli representation
//! normalised to u^dagger u = 2|E|; velocities do not depend on that choice.
//! Negative-energy terms are allowed and labelled but no filled-sea model is
//! attached to them.

use crate::currents::SpinSpec;
use crate::error::{Error, Result};
use crate::guide::{VelocityEval, VelocitySource};
use crate::matrices::{apply, build_matrix_set, kron, sandwich, CMat, MatrixKind, MatrixSet};
use crate::wavefunction::{Family, WaveFunction, C64};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

const Z: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergySign {
    Positive,
    Negative,
}

impl EnergySign {
    pub fn factor(self) -> f64 {
        match self {
            EnergySign::Positive => 1.0,
            EnergySign::Negative => -1.0,
        }
    }
}

pub fn dirac_matrices() -> &'static MatrixSet {
    static SET: OnceLock<MatrixSet> = OnceLock::new();
    SET.get_or_init(|| build_matrix_set(MatrixKind::Dirac4))
}

fn two_alphas() -> &'static [[CMat; 3]; 2] {
    static A: OnceLock<[[CMat; 3]; 2]> = OnceLock::new();
    A.get_or_init(|| {
        let set = dirac_matrices();
        let id = &set.identity;
        [
            std::array::from_fn(|i| kron(&set.alpha[i], id)),
            std::array::from_fn(|i| kron(id, &set.alpha[i])),
        ]
    })
}

/// Free spinor of momentum `p`, energy sign and two-spinor label `chi`.
pub fn free_spinor(p: [f64; 3], mass: f64, sign: EnergySign, chi: [C64; 2]) -> [C64; 4] {
    let e = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + mass * mass).sqrt();
    let sp = [
        C64::new(p[2], 0.0) * chi[0] + C64::new(p[0], -p[1]) * chi[1],
        C64::new(p[0], p[1]) * chi[0] - C64::new(p[2], 0.0) * chi[1],
    ];
    let n = (e + mass).sqrt();
    let d = e + mass;
    match sign {
        EnergySign::Positive => [n * chi[0], n * chi[1], n * sp[0] / d, n * sp[1] / d],
        EnergySign::Negative => [-n * sp[0] / d, -n * sp[1] / d, n * chi[0], n * chi[1]],
    }
}

/// |(gamma^0 E - gamma.p - m) u| for the signed energy of the term.
pub fn dirac_residual(u: &[C64; 4], p: [f64; 3], mass: f64, sign: EnergySign) -> f64 {
    let set = dirac_matrices();
    let e = sign.factor() * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + mass * mass).sqrt();
    let mut op = &set.gen[0] * C64::new(e, 0.0) - &set.identity * C64::new(mass, 0.0);
    for i in 0..3 {
        op -= &set.gen[i + 1] * C64::new(p[i], 0.0);
    }
    apply(&op, u)
        .iter()
        .map(|c| c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracTerm {
    pub coefficient: C64,
    pub p: [f64; 3],
    pub sign: EnergySign,
    pub chi: [C64; 2],
}

impl DiracTerm {
    pub fn new(coefficient: C64, p: [f64; 3], sign: EnergySign, chi: [C64; 2]) -> Self {
        Self {
            coefficient,
            p,
            sign,
            chi,
        }
    }

    pub fn up(p: [f64; 3]) -> Self {
        Self::new(
            C64::new(1.0, 0.0),
            p,
            EnergySign::Positive,
            [C64::new(1.0, 0.0), Z],
        )
    }

    pub fn down(p: [f64; 3]) -> Self {
        Self::new(
            C64::new(1.0, 0.0),
            p,
            EnergySign::Positive,
            [Z, C64::new(1.0, 0.0)],
        )
    }
}

#[derive(Debug, Clone)]
struct Built {
    c: C64,
    p: [f64; 3],
    e: f64,
    u: [C64; 4],
}

fn build(term: &DiracTerm, mass: f64) -> Result<Built> {
    let cn = (term.chi[0].norm_sqr() + term.chi[1].norm_sqr()).sqrt();
    if !(cn > 0.0) || term.p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Physics(
            "spin label must be a non-zero two-spinor".into(),
        ));
    }
    let chi = term.chi.map(|c| c / cn);
    let u = free_spinor(term.p, mass, term.sign, chi);
    let res = dirac_residual(&u, term.p, mass, term.sign);
    let e = (term.p.iter().map(|v| v * v).sum::<f64>() + mass * mass).sqrt();
    if res > 1e-12 * (1.0 + e) * (1.0 + e) {
        return Err(Error::Construction(format!("spinor residual {res:.3e}")));
    }
    Ok(Built {
        c: term.coefficient,
        p: term.p,
        e: term.sign.factor() * e,
        u,
    })
}

fn phase(p: &[f64; 3], e: f64, x: &[f64], t: f64) -> C64 {
    C64::from_polar(1.0, p[0] * x[0] + p[1] * x[1] + p[2] * x[2] - e * t)
}

/// One-particle superposition of plane-wave spinors.
#[derive(Debug, Clone)]
pub struct DiracState {
    pub mass: f64,
    pub terms: Vec<DiracTerm>,
    built: Vec<Built>,
}

impl DiracState {
    pub fn new(mass: f64, terms: Vec<DiracTerm>) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Physics("Dirac mass must be positive".into()));
        }
        if terms.is_empty() {
            return Err(Error::Config("state needs at least one term".into()));
        }
        let built = terms
            .iter()
            .map(|t| build(t, mass))
            .collect::<Result<_>>()?;
        Ok(Self { mass, terms, built })
    }

    pub fn amplitude(&self, x: &[f64], t: f64) -> [C64; 4] {
        let mut out = [Z; 4];
        for b in &self.built {
            let f = b.c * phase(&b.p, b.e, x, t);
            for k in 0..4 {
                out[k] += f * b.u[k];
            }
        }
        out
    }

    /// Two-spinor wave built from the upper components at leading order: sum c sqrt(2m) e^{ip.x} chi.
    pub fn pauli_wave(&self) -> Result<WaveFunction> {
        if self.terms.iter().any(|t| t.sign == EnergySign::Negative) {
            return Err(Error::Unsupported(
                "the Pauli reduction is for positive-energy states".into(),
            ));
        }
        let scale = (2.0 * self.mass).sqrt();
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let cn = (t.chi[0].norm_sqr() + t.chi[1].norm_sqr()).sqrt();
                (
                    t.coefficient * scale,
                    Family::SpinProduct {
                        scalar: Box::new(Family::PlaneWave { k: t.p.to_vec() }),
                        chi: t.chi.iter().map(|c| c / cn).collect(),
                    },
                )
            })
            .collect();
        WaveFunction::parametric(Family::Superposition(terms), &[3], &[self.mass], 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiracVelocity {
    pub v: [f64; 3],
    /// j^mu = (psi^dagger psi, psi^dagger alpha psi).
    pub j: [f64; 4],
    /// j^mu / sqrt(j.j) when j is timelike.
    pub u: Option<[f64; 4]>,
}

fn finish(j: [f64; 4], rho_floor: f64) -> Result<DiracVelocity> {
    if !(j[0] > rho_floor) {
        return Err(Error::Node(j[0]));
    }
    let v = [j[1] / j[0], j[2] / j[0], j[3] / j[0]];
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if speed > 1.0 + 1e-10 {
        return Err(Error::CausalityViolation(speed));
    }
    let jj = j[0] * j[0] - j[1] * j[1] - j[2] * j[2] - j[3] * j[3];
    let u = (jj > 0.0).then(|| j.map(|c| c / jj.sqrt()));
    Ok(DiracVelocity { v, j, u })
}

pub fn dirac_velocity(
    state: &DiracState,
    x: &[f64],
    t: f64,
    rho_floor: f64,
) -> Result<DiracVelocity> {
    let psi = state.amplitude(x, t);
    let set = dirac_matrices();
    let rho: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let j = [
        rho,
        sandwich(&psi, &set.alpha[0]).re,
        sandwich(&psi, &set.alpha[1]).re,
        sandwich(&psi, &set.alpha[2]).re,
    ];
    finish(j, rho_floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleLabel {
    pub p: [f64; 3],
    pub sign: EnergySign,
    pub chi: [C64; 2],
}

impl ParticleLabel {
    pub fn up(p: [f64; 3]) -> Self {
        Self {
            p,
            sign: EnergySign::Positive,
            chi: [C64::new(1.0, 0.0), Z],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dirac2Term {
    pub coefficient: C64,
    pub first: ParticleLabel,
    pub second: ParticleLabel,
}

/// Two-particle superposition of spinor products, optionally antisymmetrised.
#[derive(Debug, Clone)]
pub struct Dirac2State {
    pub mass: f64,
    pub antisymmetric: bool,
    pub terms: Vec<Dirac2Term>,
    built: Vec<(C64, Built, Built)>,
}

impl Dirac2State {
    pub fn new(mass: f64, terms: Vec<Dirac2Term>, antisymmetric: bool) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Physics("Dirac mass must be positive".into()));
        }
        if terms.is_empty() {
            return Err(Error::Config("state needs at least one term".into()));
        }
        let mk = |l: &ParticleLabel| {
            build(
                &DiracTerm::new(C64::new(1.0, 0.0), l.p, l.sign, l.chi),
                mass,
            )
        };
        let built = terms
            .iter()
            .map(|t| Ok((t.coefficient, mk(&t.first)?, mk(&t.second)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            mass,
            antisymmetric,
            terms,
            built,
        })
    }

    /// 16-component amplitude, index 4 a + b for spinor indices of particles 1 and 2.
    pub fn amplitude(&self, x1: &[f64], x2: &[f64], t: f64) -> [C64; 16] {
        let mut out = [Z; 16];
        for (c, a, b) in &self.built {
            let f = c * phase(&a.p, a.e, x1, t) * phase(&b.p, b.e, x2, t);
            for i in 0..4 {
                for k in 0..4 {
                    out[4 * i + k] += f * a.u[i] * b.u[k];
                }
            }
            if self.antisymmetric {
                let g = c * phase(&b.p, b.e, x1, t) * phase(&a.p, a.e, x2, t);
                for i in 0..4 {
                    for k in 0..4 {
                        out[4 * i + k] -= g * b.u[i] * a.u[k];
                    }
                }
            }
        }
        out
    }

    /// |psi(x1, x2) + P psi(x2, x1)| with P swapping spinor indices; zero for antisymmetric states.
    pub fn exchange_defect(&self, x1: &[f64], x2: &[f64], t: f64) -> f64 {
        let a = self.amplitude(x1, x2, t);
        let b = self.amplitude(x2, x1, t);
        (0..4)
            .flat_map(|i| (0..4).map(move |k| (i, k)))
            .map(|(i, k)| (a[4 * i + k] + b[4 * k + i]).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// j^{mu nu} = psi^dagger (alpha^mu x alpha^nu) psi with alpha^0 = 1.
pub fn dirac2_tensor_current(state: &Dirac2State, x1: &[f64], x2: &[f64], t: f64) -> [[f64; 4]; 4] {
    let psi = state.amplitude(x1, x2, t);
    let set = dirac_matrices();
    let a = |m: usize| {
        if m == 0 {
            &set.identity
        } else {
            &set.alpha[m - 1]
        }
    };
    std::array::from_fn(|m| std::array::from_fn(|n| sandwich(&psi, &kron(a(m), a(n))).re))
}

pub fn dirac2_velocity(
    state: &Dirac2State,
    x1: &[f64],
    x2: &[f64],
    t: f64,
    rho_floor: f64,
) -> Result<(DiracVelocity, DiracVelocity)> {
    let psi = state.amplitude(x1, x2, t);
    let al = two_alphas();
    let rho: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let j = |r: usize| {
        [
            rho,
            sandwich(&psi, &al[r][0]).re,
            sandwich(&psi, &al[r][1]).re,
            sandwich(&psi, &al[r][2]).re,
        ]
    };
    Ok((finish(j(0), rho_floor)?, finish(j(1), rho_floor)?))
}

/// Guidance field of a one-particle state on three axes.
pub struct DiracGuide {
    pub state: Arc<DiracState>,
    pub rho_floor: f64,
}

impl VelocitySource for DiracGuide {
    fn dims(&self) -> &[usize] {
        &[3]
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        match dirac_velocity(&self.state, x, t, self.rho_floor) {
            Ok(v) => VelocityEval::Ok(v.v.to_vec()),
            Err(_) => VelocityEval::Node,
        }
    }
}

/// Guidance field of a two-particle state on six axes.
pub struct Dirac2Guide {
    pub state: Arc<Dirac2State>,
    pub rho_floor: f64,
}

impl VelocitySource for Dirac2Guide {
    fn dims(&self) -> &[usize] {
        &[3, 3]
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        match dirac2_velocity(&self.state, &x[..3], &x[3..], t, self.rho_floor) {
            Ok((a, b)) => VelocityEval::Ok(a.v.iter().chain(&b.v).copied().collect()),
            Err(_) => VelocityEval::Node,
        }
    }
}

/// Largest relative deviation between the Dirac velocity and the g = 2 Pauli
/// velocity of the reduced two-spinor state over `points`.
pub fn pauli_limit_deviation(state: &DiracState, points: &[[f64; 3]], t: f64) -> Result<f64> {
    let pauli = state.pauli_wave()?;
    let spin = SpinSpec::new(1, 1.0)?.with_g(2.0);
    let mut worst = 0.0f64;
    for x in points {
        let d = dirac_velocity(state, x, t, 0.0)?;
        let c = crate::currents::current(&pauli, &spin, None, x, t)?;
        let vp = c.j[0].map(|j| j / c.rho);
        let num = (0..3).map(|k| (d.v[k] - vp[k]).powi(2)).sum::<f64>().sqrt();
        let den = (0..3).map(|k| vp[k] * vp[k]).sum::<f64>().sqrt();
        if den > 0.0 {
            worst = worst.max(num / den);
        } else if num > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rest_state_is_static() {
        let s = DiracState::new(1.0, vec![DiracTerm::up([0.0; 3])]).unwrap();
        let v = dirac_velocity(&s, &[0.3, -1.0, 2.0], 0.7, 0.0).unwrap();
        assert!(v.v.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn normalisation_is_two_energy() {
        let p = [0.3, -0.4, 1.2];
        let e = (0.09 + 0.16 + 1.44 + 4.0f64).sqrt();
        for sign in [EnergySign::Positive, EnergySign::Negative] {
            let u = free_spinor(p, 2.0, sign, [c(0.6, 0.0), c(0.0, 0.8)]);
            let n: f64 = u.iter().map(|v| v.norm_sqr()).sum();
            assert!((n - 2.0 * e).abs() < 1e-12);
        }
    }

    #[test]
    fn antisymmetric_identical_is_node() {
        let l = ParticleLabel::up([0.2, 0.0, 0.0]);
        let s = Dirac2State::new(
            1.0,
            vec![Dirac2Term {
                coefficient: c(1.0, 0.0),
                first: l.clone(),
                second: l,
            }],
            true,
        )
        .unwrap();
        assert!(matches!(
            dirac2_velocity(&s, &[0.1, 0.0, 0.0], &[0.4, 0.2, 0.0], 0.0, 1e-20),
            Err(Error::Node(_))
        ));
    }

    proptest! {
        #[test]
        fn spinors_solve_dirac(px in -5.0..5.0f64, py in -5.0..5.0f64, pz in -5.0..5.0f64,
                               m in 0.1..3.0f64, a in -1.0..1.0f64, b in -1.0..1.0f64, neg: bool) {
            prop_assume!(a.abs() + b.abs() > 1e-3);
            let sign = if neg { EnergySign::Negative } else { EnergySign::Positive };
            let u = free_spinor([px, py, pz], m, sign, [c(a, 0.0), c(0.0, b)]);
            let e2 = px * px + py * py + pz * pz + m * m;
            prop_assert!(dirac_residual(&u, [px, py, pz], m, sign) < 1e-12 * (1.0 + e2));
        }

        #[test]
        fn velocity_is_subluminal(ps in proptest::collection::vec((-4.0..4.0f64, -4.0..4.0f64, -4.0..4.0f64, -1.0..1.0f64, -1.0..1.0f64, any::<bool>()), 1..5),
                                  x in proptest::array::uniform3(-10.0..10.0f64), t in -5.0..5.0f64) {
            let terms = ps.iter().map(|&(a, b, cc, re, im, neg)| DiracTerm::new(
                c(re, im), [a, b, cc],
                if neg { EnergySign::Negative } else { EnergySign::Positive },
                [c(1.0, 0.0), c(im, re)])).collect();
            let s = DiracState::new(1.0, terms).unwrap();
            if let Ok(v) = dirac_velocity(&s, &x, t, 1e-14) {
                let sp = v.v.iter().map(|c| c * c).sum::<f64>().sqrt();
                prop_assert!(sp <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn antisymmetry_holds(p in proptest::array::uniform3(-2.0..2.0f64), q in proptest::array::uniform3(-2.0..2.0f64),
                              x1 in proptest::array::uniform3(-5.0..5.0f64), x2 in proptest::array::uniform3(-5.0..5.0f64)) {
            let s = Dirac2State::new(1.0, vec![Dirac2Term {
                coefficient: c(0.7, 0.2),
                first: ParticleLabel::up(p),
                second: ParticleLabel { p: q, sign: EnergySign::Positive, chi: [c(0.0, 0.0), c(1.0, 0.0)] },
            }], true).unwrap();
            prop_assert!(s.exchange_defect(&x1, &x2, 0.4) < 1e-10);
        }
    }
}
