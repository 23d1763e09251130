//! Duffin-Kemmer-Petiau fields (spin 0 and spin 1) and their massless
//! Harish-Chandra projections, built from plane-wave superpositions.
//!
//! Trajectories here follow the energy-momentum current `Theta^{mu nu} n_nu`
//! and are reported as energy-flow lines. Units are natural (hbar = c = 1).

use crate::currents::{current, SpinSpec};
use crate::error::{Error, Result};
use crate::guide::{VelocityEval, VelocitySource};
use crate::matrices::{
    apply, build_matrix_set, kron, sandwich, CMat, MatrixKind, MatrixSet, METRIC,
};
use crate::stats;
use crate::wavefunction::{Family, WaveFunction, C64};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

const Z: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DkpRep {
    Spin0,
    Spin1,
}

impl DkpRep {
    pub fn kind(self) -> MatrixKind {
        match self {
            DkpRep::Spin0 => MatrixKind::Dkp5,
            DkpRep::Spin1 => MatrixKind::Dkp10,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            DkpRep::Spin0 => 5,
            DkpRep::Spin1 => 10,
        }
    }
}

/// Matrix set plus `eta0 (beta^mu beta^nu + beta^nu beta^mu - g^{mu nu})`.
pub struct DkpAlgebra {
    pub set: MatrixSet,
    pub theta: [[CMat; 4]; 4],
}

pub fn algebra(rep: DkpRep) -> &'static DkpAlgebra {
    static A0: OnceLock<DkpAlgebra> = OnceLock::new();
    static A1: OnceLock<DkpAlgebra> = OnceLock::new();
    let cell = match rep {
        DkpRep::Spin0 => &A0,
        DkpRep::Spin1 => &A1,
    };
    cell.get_or_init(|| {
        let set = build_matrix_set(rep.kind());
        let b = &set.gen;
        let theta = std::array::from_fn(|m| {
            std::array::from_fn(|n| {
                let g = if m == n { METRIC[m] } else { 0.0 };
                &set.eta0 * (&b[m] * &b[n] + &b[n] * &b[m] - &set.identity * C64::new(g, 0.0))
            })
        });
        DkpAlgebra { set, theta }
    })
}

/// Momentum-space Hamiltonian `beta~^i p^i + m beta^0`.
pub fn hamiltonian(rep: DkpRep, p: [f64; 3], mass: f64) -> CMat {
    let set = &algebra(rep).set;
    let mut h = &set.gen[0] * C64::new(mass, 0.0);
    for i in 0..3 {
        h += &set.beta_tilde[i] * C64::new(p[i], 0.0);
    }
    h
}

/// `1 - H beta^0 / m`.
pub fn constraint_operator(rep: DkpRep, p: [f64; 3], mass: f64) -> CMat {
    let set = &algebra(rep).set;
    &set.identity - hamiltonian(rep, p, mass) * &set.gen[0] * C64::new(1.0 / mass, 0.0)
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Relative constraint residual of a momentum-space component vector.
///
/// Massive: `|C psi| / |psi|`. Massless: `|beta^i p^i beta0^2 psi + m (1 - beta0^2) gamma psi| / (m |psi|)`.
pub fn constraint_residual(
    rep: DkpRep,
    p: [f64; 3],
    mass: f64,
    massless: bool,
    psi: &[C64],
) -> f64 {
    let n = norm(psi);
    if n == 0.0 {
        return 0.0;
    }
    if !massless {
        return norm(&apply(&constraint_operator(rep, p, mass), psi)) / n;
    }
    let set = &algebra(rep).set;
    let mut bp = CMat::zeros(rep.dim(), rep.dim());
    for i in 0..3 {
        bp += &set.gen[i + 1] * C64::new(p[i], 0.0);
    }
    let gpsi = apply(set.projector.as_ref().expect("dkp projector"), psi);
    let a = apply(&(bp * &set.beta0_sq), psi);
    let b = apply(&(&set.identity - &set.beta0_sq), &gpsi);
    let r: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + y * mass).collect();
    norm(&r) / (mass * n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DkpWave {
    /// phi = c e^{i(p.x - E t)}.
    Scalar {
        coefficient: C64,
        p: [f64; 3],
        energy: Option<f64>,
    },
    /// A^mu = c (p.eps / E, eps) e^{i(p.x - E t)}.
    Vector {
        coefficient: C64,
        p: [f64; 3],
        polarization: [C64; 3],
        energy: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DkpTerm {
    pub coefficient: C64,
    pub p: [f64; 3],
    pub energy: f64,
    pub components: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct DkpState {
    pub rep: DkpRep,
    pub massless: bool,
    pub mass: f64,
    pub terms: Vec<DkpTerm>,
}

fn on_shell(p: [f64; 3], mass: f64, massless: bool, given: Option<f64>) -> Result<f64> {
    let p2 = p.iter().map(|v| v * v).sum::<f64>();
    let e = if massless {
        p2.sqrt()
    } else {
        (p2 + mass * mass).sqrt()
    };
    if let Some(g) = given {
        if (g - e).abs() > 1e-10 * (1.0 + e) {
            return Err(Error::Physics(format!(
                "momentum off shell: E = {g} but the dispersion relation gives {e}"
            )));
        }
    }
    if massless && e == 0.0 {
        return Err(Error::Physics(
            "massless wave needs non-zero momentum".into(),
        ));
    }
    Ok(e)
}

/// Reduced component vector of one plane wave.
pub fn plane_wave_components(
    rep: DkpRep,
    mass: f64,
    p: [f64; 3],
    e: f64,
    eps: Option<[C64; 3]>,
) -> Vec<C64> {
    let s = 1.0 / mass.sqrt();
    match rep {
        DkpRep::Spin0 => vec![
            -I * e * s,
            I * p[0] * s,
            I * p[1] * s,
            I * p[2] * s,
            C64::new(mass * s, 0.0),
        ],
        DkpRep::Spin1 => {
            let eps = eps.unwrap_or([Z; 3]);
            let eps0 = (0..3).map(|k| eps[k] * p[k]).sum::<C64>() / e;
            let ef: [C64; 3] = std::array::from_fn(|k| -I * p[k] * eps0 + I * e * eps[k]);
            let ip = p.map(|v| I * v);
            let bf = [
                ip[1] * eps[2] - ip[2] * eps[1],
                ip[2] * eps[0] - ip[0] * eps[2],
                ip[0] * eps[1] - ip[1] * eps[0],
            ];
            let mut out = Vec::with_capacity(10);
            out.extend(ef.iter().map(|c| -c * s));
            out.extend(bf.iter().map(|c| c * s));
            out.extend(eps.iter().map(|c| c * mass * s));
            out.push(-eps0 * mass * s);
            out
        }
    }
}

impl DkpState {
    pub fn new(rep: DkpRep, mass: f64, massless: bool, waves: &[DkpWave]) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Physics(
                "mass (or massless scale) must be positive".into(),
            ));
        }
        if waves.is_empty() {
            return Err(Error::Config("state needs at least one plane wave".into()));
        }
        let terms = waves
            .iter()
            .map(|w| {
                let (c, p, e, eps) = match (rep, w) {
                    (
                        DkpRep::Spin0,
                        DkpWave::Scalar {
                            coefficient,
                            p,
                            energy,
                        },
                    ) => (
                        *coefficient,
                        *p,
                        on_shell(*p, mass, massless, *energy)?,
                        None,
                    ),
                    (
                        DkpRep::Spin1,
                        DkpWave::Vector {
                            coefficient,
                            p,
                            polarization,
                            energy,
                        },
                    ) => (
                        *coefficient,
                        *p,
                        on_shell(*p, mass, massless, *energy)?,
                        Some(*polarization),
                    ),
                    _ => {
                        return Err(Error::Config(
                            "spin-0 states take scalar waves and spin-1 states vector waves".into(),
                        ))
                    }
                };
                let components = plane_wave_components(rep, mass, p, e, eps);
                Self::check_term(rep, mass, massless, p, e, &components)?;
                Ok(DkpTerm {
                    coefficient: c,
                    p,
                    energy: e,
                    components,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            rep,
            massless,
            mass,
            terms,
        })
    }

    /// Build from explicit component vectors; rejects anything off the constraint surface.
    pub fn from_components(
        rep: DkpRep,
        mass: f64,
        massless: bool,
        terms: Vec<(C64, [f64; 3], Vec<C64>)>,
    ) -> Result<Self> {
        let terms = terms
            .into_iter()
            .map(|(c, p, comps)| {
                if comps.len() != rep.dim() {
                    return Err(Error::Shape(format!(
                        "{} components given, {} expected",
                        comps.len(),
                        rep.dim()
                    )));
                }
                let e = on_shell(p, mass, massless, None)?;
                Self::check_term(rep, mass, massless, p, e, &comps)?;
                Ok(DkpTerm {
                    coefficient: c,
                    p,
                    energy: e,
                    components: comps,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            rep,
            massless,
            mass,
            terms,
        })
    }

    fn check_term(
        rep: DkpRep,
        mass: f64,
        massless: bool,
        p: [f64; 3],
        e: f64,
        psi: &[C64],
    ) -> Result<()> {
        let r = constraint_residual(rep, p, mass, massless, psi);
        if r > 1e-10 {
            return Err(Error::Construction(format!("constraint residual {r:.3e}")));
        }
        let h = if massless {
            hamiltonian(rep, p, 0.0)
        } else {
            hamiltonian(rep, p, mass)
        };
        let phys = if massless {
            apply(algebra(rep).set.projector.as_ref().expect("projector"), psi)
        } else {
            psi.to_vec()
        };
        let hp = apply(&h, &phys);
        let dev: Vec<C64> = hp.iter().zip(&phys).map(|(a, b)| a - b * e).collect();
        if norm(&dev) > 1e-10 * (1.0 + e) * (1.0 + norm(&phys)) {
            return Err(Error::Construction(
                "term is not an energy eigenvector".into(),
            ));
        }
        Ok(())
    }

    /// Sum of the terms at (x, t) before any projection.
    pub fn amplitude(&self, x: &[f64], t: f64) -> Vec<C64> {
        let mut out = vec![Z; self.rep.dim()];
        for term in &self.terms {
            let ph = term.coefficient
                * C64::from_polar(
                    1.0,
                    term.p[0] * x[0] + term.p[1] * x[1] + term.p[2] * x[2] - term.energy * t,
                );
            for (o, c) in out.iter_mut().zip(&term.components) {
                *o += ph * c;
            }
        }
        out
    }

    /// The amplitude entering bilinears: gamma psi when massless, psi otherwise.
    pub fn physical(&self, x: &[f64], t: f64) -> Vec<C64> {
        let psi = self.amplitude(x, t);
        if self.massless {
            apply(
                algebra(self.rep).set.projector.as_ref().expect("projector"),
                &psi,
            )
        } else {
            psi
        }
    }

    /// Theta^{mu nu} at (x, t).
    pub fn theta(&self, x: &[f64], t: f64) -> [[f64; 4]; 4] {
        let psi = self.physical(x, t);
        let th = &algebra(self.rep).theta;
        let mut out = [[0.0; 4]; 4];
        for m in 0..4 {
            for n in m..4 {
                let v = self.mass * sandwich(&psi, &th[m][n]).re;
                out[m][n] = v;
                out[n][m] = v;
            }
        }
        out
    }

    /// Charge current e psi-bar beta^mu psi, which is not sign definite.
    pub fn charge_current(&self, x: &[f64], t: f64, charge: f64) -> [f64; 4] {
        let psi = self.physical(x, t);
        let set = &algebra(self.rep).set;
        std::array::from_fn(|m| charge * sandwich(&psi, &(&set.eta0 * &set.gen[m])).re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverSource {
    Explicit,
    TotalP,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverVector {
    pub n: [f64; 4],
    pub source: ObserverSource,
}

fn mdot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

impl ObserverVector {
    pub fn new(n: [f64; 4]) -> Result<Self> {
        let nn = mdot(&n, &n);
        if !(n[0] > 0.0) || nn < -1e-12 * n[0] * n[0] {
            return Err(Error::Physics(format!(
                "observer vector must be future-causal (n0 = {}, n.n = {nn})",
                n[0]
            )));
        }
        Ok(Self {
            n,
            source: ObserverSource::Explicit,
        })
    }

    pub fn rest() -> Self {
        Self {
            n: [1.0, 0.0, 0.0, 0.0],
            source: ObserverSource::Explicit,
        }
    }

    fn lower(&self) -> [f64; 4] {
        std::array::from_fn(|k| METRIC[k] * self.n[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub j: [f64; 4],
    pub v: [f64; 3],
}

/// j^mu = Theta^{mu nu} n_nu and the energy-flow velocity j / j^0.
pub fn energy_momentum_current(
    state: &DkpState,
    n: &ObserverVector,
    x: &[f64],
    t: f64,
    floor: f64,
) -> Result<FlowSample> {
    let th = state.theta(x, t);
    let nl = n.lower();
    let j: [f64; 4] = std::array::from_fn(|m| (0..4).map(|k| th[m][k] * nl[k]).sum());
    let scale = th[0][0].abs().max(f64::MIN_POSITIVE);
    if j[0] < -1e-12 * scale {
        return Err(Error::InvariantViolation(format!(
            "energy density j0 = {:.3e} < 0",
            j[0]
        )));
    }
    if !(j[0] > floor) {
        return Err(Error::Node(j[0]));
    }
    Ok(FlowSample {
        j,
        v: [j[1] / j[0], j[2] / j[0], j[3] / j[0]],
    })
}

/// P^mu = integral of Theta^{mu 0} over a box by the midpoint rule (exact for
/// superpositions periodic in the box).
pub fn total_energy_momentum(
    state: &DkpState,
    bounds: &[(f64, f64); 3],
    points: usize,
    t: f64,
) -> Result<([f64; 4], ObserverVector)> {
    use rayon::prelude::*;
    if points == 0 || bounds.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::Config(
            "quadrature box needs max > min and points > 0".into(),
        ));
    }
    let h: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) / points as f64)
        .collect();
    let dv = h[0] * h[1] * h[2];
    let p = (0..points * points * points)
        .into_par_iter()
        .map(|f| {
            let idx = [f / (points * points), (f / points) % points, f % points];
            let x: Vec<f64> = (0..3)
                .map(|k| bounds[k].0 + (idx[k] as f64 + 0.5) * h[k])
                .collect();
            let th = state.theta(&x, t);
            [th[0][0], th[1][0], th[2][0], th[3][0]]
        })
        .reduce(|| [0.0; 4], |a, b| std::array::from_fn(|k| a[k] + b[k]))
        .map(|v| v * dv);
    let pp = mdot(&p, &p);
    if !(pp > 1e-12 * p[0] * p[0]) || !(p[0] > 0.0) {
        return Err(Error::DegenerateObserver(pp));
    }
    let s = pp.sqrt();
    Ok((
        p,
        ObserverVector {
            n: p.map(|v| v / s),
            source: ObserverSource::TotalP,
        },
    ))
}

/// Momentum lattice used for the slow-motion comparison: p = eps m (x + 0.3 (a, b, 0))
/// for a, b in {-1, 0, 1} with Gaussian weights.
pub fn nonrel_benchmark_waves(
    rep: DkpRep,
    eps: f64,
    mass: f64,
    polarization: [C64; 3],
) -> Vec<DkpWave> {
    let mut out = Vec::new();
    for a in [-1.0, 0.0, 1.0] {
        for b in [-1.0, 0.0, 1.0] {
            let w = (-0.09 * (a * a + b * b) / 0.36f64).exp();
            let p = [eps * mass * (1.0 + 0.3 * a), eps * mass * 0.3 * b, 0.0];
            let coefficient = C64::new(w, 0.0);
            out.push(match rep {
                DkpRep::Spin0 => DkpWave::Scalar {
                    coefficient,
                    p,
                    energy: None,
                },
                DkpRep::Spin1 => DkpWave::Vector {
                    coefficient,
                    p,
                    polarization,
                    energy: None,
                },
            });
        }
    }
    out
}

/// Schroedinger-type wave of the same superposition: phi (spin 0) or the
/// Cartesian vector Phi (spin 1), both scaled by sqrt(2) m.
pub fn nonrel_wave(state: &DkpState) -> Result<WaveFunction> {
    let scale = 2f64.sqrt() * state.mass;
    let terms = state
        .terms
        .iter()
        .map(|t| {
            let pw = Family::PlaneWave { k: t.p.to_vec() };
            let fam = match state.rep {
                DkpRep::Spin0 => pw,
                DkpRep::Spin1 => Family::SpinProduct {
                    scalar: Box::new(pw),
                    chi: (6..9)
                        .map(|k| t.components[k] * state.mass.sqrt() / state.mass)
                        .collect(),
                },
            };
            (t.coefficient * scale, fam)
        })
        .collect();
    WaveFunction::parametric(Family::Superposition(terms), &[3], &[state.mass], 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonrelPoint {
    pub eps: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonrelOptions {
    pub mass: f64,
    pub points: usize,
    pub seed: u64,
    pub polarization: [C64; 3],
}

impl Default for NonrelOptions {
    fn default() -> Self {
        Self {
            mass: 1.0,
            points: 3000,
            seed: 5,
            polarization: [C64::new(0.6, 0.0), C64::new(0.8, 0.0), Z],
        }
    }
}

/// Density-weighted deviation sqrt(sum rho |v - v_nr|^2 / sum rho |v_nr|^2) of the
/// energy-flow velocity from the non-relativistic current velocity, sampled
/// uniformly over one period box of the benchmark lattice.
pub fn nonrel_deviation(state: &DkpState, points: &[[f64; 3]]) -> Result<f64> {
    let nr = nonrel_wave(state)?;
    let spin = match state.rep {
        DkpRep::Spin0 => SpinSpec::new(0, 1.0)?,
        DkpRep::Spin1 => SpinSpec::new(2, 1.0)?.with_g(2.0),
    };
    let n = ObserverVector::rest();
    let (mut num, mut den) = (0.0, 0.0);
    for x in points {
        let c = current(&nr, &spin, None, x, 0.0)?;
        if c.rho == 0.0 {
            continue;
        }
        let vnr = c.j[0].map(|j| j / c.rho);
        let v = match energy_momentum_current(state, &n, x, 0.0, 0.0) {
            Ok(f) => f.v,
            Err(Error::Node(_)) => continue,
            Err(e) => return Err(e),
        };
        num += c.rho * (0..3).map(|k| (v[k] - vnr[k]).powi(2)).sum::<f64>();
        den += c.rho * (0..3).map(|k| vnr[k] * vnr[k]).sum::<f64>();
    }
    Ok(if num == 0.0 { 0.0 } else { (num / den).sqrt() })
}

/// Deviation curve over the benchmark family for each `eps` (= |p| / m).
pub fn nonrel_limit_check(
    rep: DkpRep,
    eps: &[f64],
    opts: &NonrelOptions,
) -> Result<Vec<NonrelPoint>> {
    eps.iter()
        .map(|&e| {
            let state = DkpState::new(
                rep,
                opts.mass,
                false,
                &nonrel_benchmark_waves(rep, e, opts.mass, opts.polarization),
            )?;
            let half = if e > 0.0 {
                std::f64::consts::PI / (0.3 * e * opts.mass)
            } else {
                1.0
            };
            let mut rng = stats::rng_stream(opts.seed, 0);
            let pts: Vec<[f64; 3]> = (0..opts.points)
                .map(|_| std::array::from_fn(|_| rng.random_range(-half..half)))
                .collect();
            Ok(NonrelPoint {
                eps: e,
                deviation: nonrel_deviation(&state, &pts)?,
            })
        })
        .collect()
}

/// Two-particle state: sum of c_k psi_A,k (x) psi_B,k, optionally symmetrised.
#[derive(Debug, Clone)]
pub struct Dkp2State {
    pub terms: Vec<(C64, DkpState, DkpState)>,
    pub symmetric: bool,
}

impl Dkp2State {
    pub fn new(terms: Vec<(C64, DkpState, DkpState)>, symmetric: bool) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Config("empty two-particle state".into()))?;
        let (rep, mass, ml) = (first.1.rep, first.1.mass, first.1.massless);
        for (_, a, b) in &terms {
            for s in [a, b] {
                if s.rep != rep || s.mass != mass || s.massless != ml {
                    return Err(Error::Config(
                        "both particles must share representation, mass and massless flag".into(),
                    ));
                }
            }
        }
        Ok(Self { terms, symmetric })
    }

    pub fn rep(&self) -> DkpRep {
        self.terms[0].1.rep
    }

    pub fn mass(&self) -> f64 {
        self.terms[0].1.mass
    }

    pub fn product(a: DkpState, b: DkpState) -> Result<Self> {
        Self::new(vec![(C64::new(1.0, 0.0), a, b)], false)
    }

    pub fn amplitude(&self, x1: &[f64], x2: &[f64], t: f64) -> Vec<C64> {
        let d = self.rep().dim();
        let mut out = vec![Z; d * d];
        let mut add = |c: C64, a: &[C64], b: &[C64]| {
            for i in 0..d {
                for k in 0..d {
                    out[i * d + k] += c * a[i] * b[k];
                }
            }
        };
        for (c, a, b) in &self.terms {
            add(*c, &a.physical(x1, t), &b.physical(x2, t));
            if self.symmetric {
                add(*c, &b.physical(x1, t), &a.physical(x2, t));
            }
        }
        out
    }

    /// j^{mu1 mu2} = Theta^{mu1 nu1 mu2 nu2} a_nu1 a_nu2.
    pub fn tensor_current(
        &self,
        a: &ObserverVector,
        x1: &[f64],
        x2: &[f64],
        t: f64,
    ) -> [[f64; 4]; 4] {
        let psi = self.amplitude(x1, x2, t);
        let th = &algebra(self.rep()).theta;
        let al = a.lower();
        let mk: Vec<CMat> = (0..4)
            .map(|m| {
                let mut s = CMat::zeros(self.rep().dim(), self.rep().dim());
                for k in 0..4 {
                    if al[k] != 0.0 {
                        s += &th[m][k] * C64::new(al[k], 0.0);
                    }
                }
                s
            })
            .collect();
        let m2 = self.mass() * self.mass();
        std::array::from_fn(|m| {
            std::array::from_fn(|n| m2 * sandwich(&psi, &kron(&mk[m], &mk[n])).re)
        })
    }
}

/// Velocities v_1^i = j^{i0} / j^{00}, v_2^i = j^{0i} / j^{00}.
pub fn dkp2_velocity(
    state: &Dkp2State,
    a: &ObserverVector,
    x1: &[f64],
    x2: &[f64],
    t: f64,
    floor: f64,
) -> Result<([f64; 3], [f64; 3])> {
    let j = state.tensor_current(a, x1, x2, t);
    if j[0][0] < -1e-12 * j.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) {
        return Err(Error::InvariantViolation(format!(
            "j^00 = {:.3e} < 0",
            j[0][0]
        )));
    }
    if !(j[0][0] > floor) {
        return Err(Error::Node(j[0][0]));
    }
    Ok((
        [j[1][0] / j[0][0], j[2][0] / j[0][0], j[3][0] / j[0][0]],
        [j[0][1] / j[0][0], j[0][2] / j[0][0], j[0][3] / j[0][0]],
    ))
}

/// Minkowski square of the per-particle vectors j^{mu 0} and j^{0 mu}, with their time parts.
pub fn tensor_causality(j: &[[f64; 4]; 4]) -> [(f64, f64); 2] {
    let w1 = [j[0][0], j[1][0], j[2][0], j[3][0]];
    let w2 = j[0];
    [(w1[0], mdot(&w1, &w1)), (w2[0], mdot(&w2, &w2))]
}

/// Energy-flow field of a one-particle state.
pub struct DkpFlow {
    pub state: Arc<DkpState>,
    pub n: ObserverVector,
    pub floor: f64,
}

impl VelocitySource for DkpFlow {
    fn dims(&self) -> &[usize] {
        &[3]
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        match energy_momentum_current(&self.state, &self.n, x, t, self.floor) {
            Ok(f) => VelocityEval::Ok(f.v.to_vec()),
            Err(_) => VelocityEval::Node,
        }
    }
}

/// Energy-flow field of a two-particle state.
pub struct Dkp2Flow {
    pub state: Arc<Dkp2State>,
    pub a: ObserverVector,
    pub floor: f64,
}

impl VelocitySource for Dkp2Flow {
    fn dims(&self) -> &[usize] {
        &[3, 3]
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        match dkp2_velocity(&self.state, &self.a, &x[..3], &x[3..], t, self.floor) {
            Ok((a, b)) => VelocityEval::Ok(a.iter().chain(&b).copied().collect()),
            Err(_) => VelocityEval::Node,
        }
    }
}
