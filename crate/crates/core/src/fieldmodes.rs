//! Decoupled bosonic field modes. Each mode is an oscillator in its mode
//! coordinate q, evolved exactly in the Fock basis; the field beable q(k)
//! follows q' = (E(k) / hbar) Im(psi* d_q psi) / |psi|^2.
//!
//! The factor E(k) sits inside the current, so for E(k) != hbar the beable
//! speed differs from that of a unit-frequency Schroedinger particle. The
//! zero-point energy is dropped as a global phase.

use crate::error::{Error, Result};
use crate::guide::{
    ks_report, marginal_cdfs, rk4_flat, sample_density, Controls, EquivarianceReport,
    SamplerOptions, Status, VelocityEval, VelocitySource,
};
use crate::stats::hermite_functions;
use crate::wavefunction::C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Highest Fock level kept per mode.
pub const N_MAX: usize = 32;
/// Largest norm allowed above `N_MAX`.
pub const TAIL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dispersion {
    /// E = hbar^2 k^2 / 2m.
    NonRelativistic { mass: f64 },
    /// E = hbar |k| (c = 1).
    Massless,
}

impl Dispersion {
    pub fn energy(&self, k: f64, hbar: f64) -> f64 {
        match *self {
            Dispersion::NonRelativistic { mass } => hbar * hbar * k * k / (2.0 * mass),
            Dispersion::Massless => hbar * k.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: f64,
    pub energy: f64,
    /// Fock amplitudes at t = 0.
    pub coefficients: Vec<C64>,
    pub q: f64,
}

impl Mode {
    /// Normalises the amplitudes; more than `N_MAX + 1` levels is a configuration error.
    pub fn new(
        k: f64,
        dispersion: Dispersion,
        hbar: f64,
        coefficients: Vec<C64>,
        q: f64,
    ) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() > N_MAX + 1 {
            return Err(Error::Config(format!(
                "a mode takes 1..={} Fock amplitudes, got {}",
                N_MAX + 1,
                coefficients.len()
            )));
        }
        let n2: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::Normalization("mode amplitudes vanish".into()));
        }
        let energy = dispersion.energy(k, hbar);
        if !(energy > 0.0) {
            return Err(Error::Physics(
                "mode energy must be positive (k != 0)".into(),
            ));
        }
        let s = n2.sqrt();
        Ok(Self {
            k,
            energy,
            coefficients: coefficients.into_iter().map(|c| c / s).collect(),
            q,
        })
    }

    pub fn ground(k: f64, dispersion: Dispersion, hbar: f64, q: f64) -> Result<Self> {
        Self::new(k, dispersion, hbar, vec![C64::new(1.0, 0.0)], q)
    }

    /// Coherent state with complex label `alpha`; its centre is sqrt(2) Re(alpha e^{-i E t / hbar}).
    pub fn coherent(k: f64, dispersion: Dispersion, hbar: f64, alpha: C64, q: f64) -> Result<Self> {
        let mut c = Vec::with_capacity(N_MAX + 1);
        let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 0..=N_MAX {
            if n > 0 {
                term *= alpha / (n as f64).sqrt();
            }
            c.push(term);
        }
        let kept: f64 = c.iter().map(|v| v.norm_sqr()).sum();
        if 1.0 - kept > TAIL_TOLERANCE {
            return Err(Error::Config(format!(
                "coherent amplitude {alpha} needs more than {N_MAX} Fock levels (tail {:.1e})",
                1.0 - kept
            )));
        }
        Self::new(k, dispersion, hbar, c, q)
    }

    fn amplitudes(&self, t: f64, hbar: f64) -> impl Iterator<Item = (usize, C64)> + '_ {
        let w = self.energy / hbar;
        self.coefficients
            .iter()
            .enumerate()
            .map(move |(n, c)| (n, c * C64::from_polar(1.0, -(n as f64) * w * t)))
    }

    /// psi(q, t) and d psi / d q.
    pub fn psi(&self, q: f64, t: f64, hbar: f64) -> (C64, C64) {
        let n = self.coefficients.len();
        let h = hermite_functions(n + 1, q);
        let mut v = C64::new(0.0, 0.0);
        let mut d = C64::new(0.0, 0.0);
        for (k, a) in self.amplitudes(t, hbar) {
            v += a * h[k];
            let lower = if k > 0 {
                (k as f64 / 2.0).sqrt() * h[k - 1]
            } else {
                0.0
            };
            d += a * (lower - ((k + 1) as f64 / 2.0).sqrt() * h[k + 1]);
        }
        (v, d)
    }

    pub fn density(&self, q: f64, t: f64, hbar: f64) -> f64 {
        self.psi(q, t, hbar).0.norm_sqr()
    }

    /// Velocity field of the beable at (q, t); `None` below `floor`.
    pub fn velocity_at(&self, q: f64, t: f64, hbar: f64, floor: f64) -> Option<f64> {
        let (v, d) = self.psi(q, t, hbar);
        let rho = v.norm_sqr();
        (rho > floor).then(|| self.energy / hbar * (v.conj() * d).im / rho)
    }

    /// <H> without the zero-point term.
    pub fn energy_expectation(&self, t: f64, hbar: f64) -> f64 {
        self.amplitudes(t, hbar)
            .map(|(n, a)| a.norm_sqr() * n as f64 * self.energy)
            .sum()
    }

    /// Classical turning region enlarged by a safety margin.
    pub fn extent(&self) -> f64 {
        (2.0 * self.coefficients.len() as f64 + 1.0).sqrt() + 8.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub modes: Vec<Mode>,
    pub hbar: f64,
    pub t: f64,
}

impl ModeState {
    pub fn new(modes: Vec<Mode>, hbar: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Config("need at least one mode".into()));
        }
        if !(hbar > 0.0) {
            return Err(Error::Config("hbar must be positive".into()));
        }
        Ok(Self {
            modes,
            hbar,
            t: 0.0,
        })
    }

    /// Product wavefunctional value at the given mode coordinates.
    pub fn wavefunctional(&self, qs: &[f64], t: f64) -> C64 {
        self.modes
            .iter()
            .zip(qs)
            .map(|(m, &q)| m.psi(q, t, self.hbar).0)
            .product()
    }
}

/// Beable velocity of mode `index` at the current time.
pub fn mode_velocity(state: &ModeState, index: usize) -> Result<f64> {
    let m = state
        .modes
        .get(index)
        .ok_or_else(|| Error::Config(format!("no mode {index}")))?;
    m.velocity_at(m.q, state.t, state.hbar, 1e-300)
        .ok_or_else(|| Error::Node(m.density(m.q, state.t, state.hbar)))
}

/// Velocity field of one mode.
pub struct ModeFlow<'a> {
    pub mode: &'a Mode,
    pub hbar: f64,
    pub floor: f64,
}

impl VelocitySource for ModeFlow<'_> {
    fn dims(&self) -> &[usize] {
        &[1]
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        match self.mode.velocity_at(x[0], t, self.hbar, self.floor) {
            Some(v) if v.is_finite() => VelocityEval::Ok(vec![v]),
            _ => VelocityEval::Node,
        }
    }
}

/// Advance all beables by `steps` RK4 steps of size `dt`; wavefunctions are
/// exact at every time. Returns the state after each step, starting with the input.
pub fn evolve_modes(state: &ModeState, dt: f64, steps: usize) -> Result<Vec<ModeState>> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }
    let t0 = state.t;
    let t1 = t0 + dt * steps as f64;
    let paths: Vec<Vec<f64>> = state
        .modes
        .par_iter()
        .map(|m| {
            let flow = ModeFlow {
                mode: m,
                hbar: state.hbar,
                floor: 1e-300,
            };
            let (xs, _, st) = rk4_flat(&[m.q], t0, &flow, t1, &Controls::new(dt));
            if st != Status::Ok {
                return Err(Error::Node(0.0));
            }
            Ok(xs.into_iter().map(|x| x[0]).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..=steps)
        .map(|i| {
            let mut s = state.clone();
            s.t = t0 + dt * i as f64;
            for (m, p) in s.modes.iter_mut().zip(&paths) {
                m.q = p[i.min(p.len() - 1)];
            }
            s
        })
        .collect())
}

/// Equilibrium ensemble of one mode transported to each check time and
/// compared with |psi(t)|^2.
pub fn mode_equivariance(
    mode: &Mode,
    hbar: f64,
    n: usize,
    t_checks: &[f64],
    dt: f64,
    seed: u64,
) -> Result<Vec<EquivarianceReport>> {
    let ext = mode.extent();
    let bounds = [(-ext, ext)];
    let xs = sample_density(
        &|x| mode.density(x[0], 0.0, hbar),
        &bounds,
        n,
        seed,
        &SamplerOptions::default(),
    )?;
    let flow = ModeFlow {
        mode,
        hbar,
        floor: 1e-300,
    };
    let mut cur: Vec<(f64, f64, Status)> = xs.iter().map(|x| (x[0], 0.0, Status::Ok)).collect();
    let mut ts = t_checks.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    for t in ts {
        cur = cur
            .into_par_iter()
            .map(|(q, t0, st)| {
                if st != Status::Ok || t <= t0 {
                    return (q, t0, st);
                }
                let (p, _, s) = rk4_flat(&[q], t0, &flow, t, &Controls::new(dt));
                (p.last().map_or(q, |v| v[0]), t, s)
            })
            .collect();
        let alive: Vec<Vec<f64>> = cur
            .iter()
            .filter(|c| c.2 == Status::Ok)
            .map(|c| vec![c.0])
            .collect();
        let cdf = marginal_cdfs(&|x| mode.density(x[0], t, hbar), &bounds, 4001);
        out.push(ks_report(&alive, n - alive.len(), n, &cdf, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn ground_state_frozen() {
        let s = ModeState::new(
            vec![
                Mode::ground(1.0, Dispersion::Massless, 1.0, 0.4).unwrap(),
                Mode::new(2.0, Dispersion::Massless, 1.0, vec![c(1.0), c(1.0)], 0.3).unwrap(),
            ],
            1.0,
        )
        .unwrap();
        let path = evolve_modes(&s, 0.01, 200).unwrap();
        assert_eq!(path.last().unwrap().modes[0].q, 0.4);
        assert!((path.last().unwrap().modes[1].q - 0.3).abs() > 1e-3);
    }

    #[test]
    fn derivative_matches_difference() {
        let m = Mode::new(
            1.0,
            Dispersion::NonRelativistic { mass: 0.5 },
            1.0,
            vec![c(0.3), C64::new(0.1, 0.5), c(-0.4), c(0.2)],
            0.0,
        )
        .unwrap();
        for &q in &[-1.3, 0.2, 2.1] {
            let h = 1e-5;
            let fd = (m.psi(q + h, 0.7, 1.0).0 - m.psi(q - h, 0.7, 1.0).0) / (2.0 * h);
            assert!((fd - m.psi(q, 0.7, 1.0).1).norm() < 1e-8);
        }
    }

    #[test]
    fn coherent_tail_guard() {
        assert!(Mode::coherent(1.0, Dispersion::Massless, 1.0, c(2.0), 0.0).is_ok());
        assert!(Mode::coherent(1.0, Dispersion::Massless, 1.0, c(4.0), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn energy_constant(cs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..8), t in 0.0..20.0f64) {
            prop_assume!(cs.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3));
            let m = Mode::new(1.5, Dispersion::Massless, 1.0, cs.iter().map(|&(a, b)| C64::new(a, b)).collect(), 0.0).unwrap();
            let e0 = m.energy_expectation(0.0, 1.0);
            prop_assert!((m.energy_expectation(t, 1.0) - e0).abs() < 1e-10 * (1.0 + e0));
        }

        #[test]
        fn density_normalised(cs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..6), t in 0.0..5.0f64) {
            prop_assume!(cs.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3));
            let m = Mode::new(1.0, Dispersion::Massless, 1.0, cs.iter().map(|&(a, b)| C64::new(a, b)).collect(), 0.0).unwrap();
            let e = m.extent();
            let n = 4001;
            let h = 2.0 * e / (n - 1) as f64;
            let s: f64 = (0..n).map(|i| m.density(-e + i as f64 * h, t, 1.0)).sum::<f64>() * h;
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
